//! Conditional-expectation engines for the EM E-step.
//!
//! Given independent Poisson priors `x_p ~ Poisson(λ_p)` and an observation
//! `A x = y` through the binary operator, the E-step needs `E[x | A x = y]`.
//! Two engines are provided:
//!
//! * [`estep_exact`] enumerates the feasible set of integer count vectors and
//!   averages with the exact conditional weights. Intended for small
//!   instances; it also yields the exact observed-data likelihood.
//! * [`estep_ipf`] computes the KL projection (I-projection) of `λ` onto
//!   `{x >= 0 : A x = y}` by cyclic proportional scaling over the operator
//!   rows. This is the scalable surrogate: it reproduces the observed rows to
//!   tolerance and keeps the prior's structure otherwise.
//!
//! Pairs not covered by any row are unconstrained; both engines leave their
//! expectation at the prior mean.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::engines::lp::{lp_solve, LinearProgram, LpOptions, LpStatus};
use crate::net::{ObservationOperator, RateMatrix};
use crate::{Error, Result};

/// Which engine produced an E-step result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EStepMethod {
    Exact,
    Ipf,
}

/// Tuning for both engines.
#[derive(Debug, Clone)]
pub struct EStepOptions {
    /// Max DFS node visits for the exact enumerator (both passes combined).
    pub budget: usize,
    /// IPF termination: max absolute row residual.
    pub tol: f64,
    /// IPF sweep cap.
    pub max_iter: usize,
    /// Floor applied to rates inside IPF so multiplicative updates cannot
    /// lock onto zero while still allowing effective edge deletion.
    pub rate_floor: f64,
    /// Keep per-sweep iterates in [`IpfOutcome::sweep_iterates`].
    pub record_sweeps: bool,
}

impl Default for EStepOptions {
    fn default() -> Self {
        EStepOptions {
            budget: 2_000_000,
            tol: 1e-8,
            max_iter: 20_000,
            rate_floor: 1e-9,
            record_sweeps: false,
        }
    }
}

/// Expected counts for one observation vector, with engine diagnostics.
#[derive(Debug, Clone)]
pub struct EStepResult {
    /// Conditional expectation per pair, in pair order.
    pub expected: Vec<f64>,
    pub method: EStepMethod,
    /// Sweeps (IPF) or feasible points (exact).
    pub iterations: usize,
    /// Max absolute row residual at termination; zero-ish for exact.
    pub residual: f64,
    /// False when IPF hit its sweep cap before reaching tolerance.
    pub converged: bool,
    /// Exact engine only: `ln P(y | λ)`, the observed-data log-likelihood of
    /// this observation vector.
    pub log_likelihood: Option<f64>,
}

/// Exact conditional expectation by exhaustive enumeration of
/// `{x integer >= 0 : A x = y}` with weights `∏ λ^x / x!`.
pub fn estep_exact(
    op: &ObservationOperator,
    rates: &RateMatrix,
    y: &[u64],
    opts: &EStepOptions,
) -> Result<EStepResult> {
    if rates.len() != op.n_cols() {
        return Err(Error::Contract(format!(
            "operator has {} columns, rates has {}",
            op.n_cols(),
            rates.len()
        )));
    }
    if y.len() != op.n_rows() {
        return Err(Error::Contract(format!(
            "operator has {} rows, observation has {}",
            op.n_rows(),
            y.len()
        )));
    }

    // Enumerate only pairs that appear in some row.
    let mut covered = vec![false; op.n_cols()];
    for r in 0..op.n_rows() {
        if op.row_support(r).is_empty() && y[r] > 0 {
            return Err(Error::InfeasibleObservation(format!(
                "row {r} observes {} but covers no pairs",
                y[r]
            )));
        }
        for &p in op.row_support(r) {
            covered[p] = true;
        }
    }
    let positions: Vec<usize> = (0..op.n_cols()).filter(|&p| covered[p]).collect();
    let pos_of: Vec<Option<usize>> = {
        let mut v = vec![None; op.n_cols()];
        for (i, &p) in positions.iter().enumerate() {
            v[p] = Some(i);
        }
        v
    };
    // rows_of[i]: rows whose support contains enumeration position i.
    let mut rows_of: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
    // rows_ending_at[i]: rows whose last covered position is i; their budget
    // must be exhausted once position i is assigned.
    let mut rows_ending_at: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
    for r in 0..op.n_rows() {
        let mut last = None;
        for &p in op.row_support(r) {
            let i = pos_of[p].expect("support pairs are covered");
            rows_of[i].push(r);
            last = Some(last.map_or(i, |l: usize| l.max(i)));
        }
        if let Some(i) = last {
            rows_ending_at[i].push(r);
        }
    }

    let max_count = y.iter().copied().max().unwrap_or(0) as usize;
    let ln_fact: Vec<f64> = (0..=max_count).map(|k| ln_gamma(k as f64 + 1.0)).collect();
    let ln_rate: Vec<f64> = positions
        .iter()
        .map(|&p| {
            let l = rates.get(p);
            if l > 0.0 {
                l.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();

    struct Dfs<'a> {
        positions: &'a [usize],
        rows_of: &'a [Vec<usize>],
        rows_ending_at: &'a [Vec<usize>],
        ln_rate: &'a [f64],
        ln_fact: &'a [f64],
        zero_rate: Vec<bool>,
        remaining: Vec<i64>,
        assignment: Vec<u64>,
        visited: usize,
        budget: usize,
        // pass 1 output
        max_logw: f64,
        leaves: usize,
        // pass 2 accumulators
        accumulate: bool,
        z: f64,
        moments: Vec<f64>,
    }

    impl Dfs<'_> {
        fn run(&mut self, pos: usize, logw: f64) -> Result<()> {
            self.visited += 1;
            if self.visited > self.budget {
                return Err(Error::EnumerationBudget {
                    visited: self.visited,
                    budget: self.budget,
                });
            }
            if pos == self.positions.len() {
                self.leaves += 1;
                if self.accumulate {
                    let w = (logw - self.max_logw).exp();
                    self.z += w;
                    for (m, &x) in self.moments.iter_mut().zip(&self.assignment) {
                        *m += x as f64 * w;
                    }
                } else if logw > self.max_logw {
                    self.max_logw = logw;
                }
                return Ok(());
            }
            let ub = if self.zero_rate[pos] {
                0
            } else {
                self.rows_of[pos]
                    .iter()
                    .map(|&r| self.remaining[r])
                    .min()
                    .unwrap_or(0)
                    .max(0) as u64
            };
            for v in 0..=ub {
                for &r in &self.rows_of[pos] {
                    self.remaining[r] -= v as i64;
                }
                let dead = self.rows_ending_at[pos]
                    .iter()
                    .any(|&r| self.remaining[r] != 0);
                if !dead {
                    self.assignment[pos] = v;
                    let step = if v == 0 {
                        0.0
                    } else {
                        v as f64 * self.ln_rate[pos] - self.ln_fact[v as usize]
                    };
                    self.run(pos + 1, logw + step)?;
                }
                for &r in &self.rows_of[pos] {
                    self.remaining[r] += v as i64;
                }
            }
            self.assignment[pos] = 0;
            Ok(())
        }
    }

    let mut dfs = Dfs {
        positions: &positions,
        rows_of: &rows_of,
        rows_ending_at: &rows_ending_at,
        ln_rate: &ln_rate,
        ln_fact: &ln_fact,
        zero_rate: positions.iter().map(|&p| rates.get(p) == 0.0).collect(),
        remaining: y.iter().map(|&v| v as i64).collect(),
        assignment: vec![0; positions.len()],
        visited: 0,
        budget: opts.budget,
        max_logw: f64::NEG_INFINITY,
        leaves: 0,
        accumulate: false,
        z: 0.0,
        moments: vec![0.0; positions.len()],
    };

    dfs.run(0, 0.0)?;
    if dfs.leaves == 0 {
        return Err(Error::InfeasibleObservation(
            "no nonnegative integer traffic matches the observation".into(),
        ));
    }
    let feasible_points = dfs.leaves;
    dfs.accumulate = true;
    dfs.leaves = 0;
    dfs.run(0, 0.0)?;

    let mut expected: Vec<f64> = rates.values().to_vec();
    for (i, &p) in positions.iter().enumerate() {
        expected[p] = dfs.moments[i] / dfs.z;
    }
    // ln P(y | λ) = ln Z - Σ_covered λ, the unconstrained coordinates
    // integrate to one.
    let log_likelihood = dfs.max_logw + dfs.z.ln()
        - positions.iter().map(|&p| rates.get(p)).sum::<f64>();

    let residual = (0..op.n_rows())
        .map(|r| {
            let s: f64 = op.row_support(r).iter().map(|&p| expected[p]).sum();
            (s - y[r] as f64).abs()
        })
        .fold(0.0, f64::max);

    Ok(EStepResult {
        expected,
        method: EStepMethod::Exact,
        iterations: feasible_points,
        residual,
        converged: true,
        log_likelihood: Some(log_likelihood),
    })
}

/// Outcome of one IPF projection.
#[derive(Debug, Clone)]
pub struct IpfOutcome {
    pub x: Vec<f64>,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
    /// Iterate after each sweep, present when
    /// [`EStepOptions::record_sweeps`] is set.
    pub sweep_iterates: Option<Vec<Vec<f64>>>,
}

/// Reusable IPF projector for one operator.
pub struct IpfEngine<'a> {
    op: &'a ObservationOperator,
    opts: EStepOptions,
}

impl<'a> IpfEngine<'a> {
    pub fn new(op: &'a ObservationOperator, opts: EStepOptions) -> Self {
        IpfEngine { op, opts }
    }

    /// Projects `lambda` onto `{x >= 0 : A x = y}` in KL geometry.
    ///
    /// `warm_ratio`, when given, multiplies the floored prior elementwise to
    /// form the starting iterate. Any ratio vector of accumulated row
    /// multipliers leaves the projection target unchanged (the subtracted
    /// KL terms are constant on the feasible set), so a previous solve's
    /// `x / λ_prev` is a valid warm start.
    pub fn project(
        &self,
        lambda: &[f64],
        y: &[f64],
        warm_ratio: Option<&[f64]>,
    ) -> Result<IpfOutcome> {
        let op = self.op;
        if lambda.len() != op.n_cols() || y.len() != op.n_rows() {
            return Err(Error::Contract(format!(
                "ipf: operator is {}x{}, got rates of {} and observation of {}",
                op.n_rows(),
                op.n_cols(),
                lambda.len(),
                y.len()
            )));
        }
        let floor = self.opts.rate_floor;
        let mut x: Vec<f64> = match warm_ratio {
            Some(ratio) => lambda
                .iter()
                .zip(ratio)
                .map(|(&l, &r)| l.max(floor) * r)
                .collect(),
            None => lambda.iter().map(|&l| l.max(floor)).collect(),
        };

        for r in 0..op.n_rows() {
            if op.row_support(r).is_empty() && y[r] > self.opts.tol {
                return Err(Error::InfeasibleObservation(format!(
                    "row {r} observes {} but covers no pairs",
                    y[r]
                )));
            }
        }

        let mut iterates = self.opts.record_sweeps.then(Vec::new);
        let mut resets = 0usize;
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        // Margin combinations can force a pair to zero without any single
        // row saying so; multiplicative updates approach such boundary
        // points only harmonically. On stall, certify the shrinking
        // suspects with a tiny LP and freeze the true zeros, after which
        // convergence is geometric again.
        let mut next_stall_check = 512.min(self.opts.max_iter / 2).max(64);
        while sweeps < self.opts.max_iter {
            for r in 0..op.n_rows() {
                let support = op.row_support(r);
                if support.is_empty() {
                    continue;
                }
                if y[r] == 0.0 {
                    for &p in support {
                        x[p] = 0.0;
                    }
                    continue;
                }
                let s: f64 = support.iter().map(|&p| x[p]).sum();
                if s <= f64::MIN_POSITIVE {
                    // Mass vanished numerically under a positive target;
                    // re-inflate from the floored prior and keep going.
                    resets += 1;
                    if resets > 3 * op.n_rows().max(4) {
                        return Err(Error::InfeasibleObservation(format!(
                            "row {r} target {} unreachable: support mass repeatedly vanished",
                            y[r]
                        )));
                    }
                    for &p in support {
                        x[p] = lambda[p].max(floor);
                    }
                    continue;
                }
                let f = y[r] / s;
                for &p in support {
                    x[p] *= f;
                }
            }
            sweeps += 1;
            residual = (0..op.n_rows())
                .map(|r| {
                    let s: f64 = op.row_support(r).iter().map(|&p| x[p]).sum();
                    (s - y[r]).abs()
                })
                .fold(0.0, f64::max);
            if let Some(tr) = iterates.as_mut() {
                tr.push(x.clone());
            }
            if residual <= self.opts.tol {
                break;
            }
            if sweeps >= next_stall_check {
                next_stall_check = next_stall_check.saturating_mul(2);
                self.freeze_implied_zeros(y, &mut x);
            }
        }

        Ok(IpfOutcome {
            x,
            sweeps,
            residual,
            converged: residual <= self.opts.tol,
            sweep_iterates: iterates,
        })
    }

    /// Zeroes every small, still-positive entry whose maximum over the
    /// feasible polytope `{x >= 0 : A x = y}` is certified (by an LP per
    /// suspect) to be zero. Entries that are genuinely free keep their mass.
    fn freeze_implied_zeros(&self, y: &[f64], x: &mut [f64]) {
        let op = self.op;
        let scale = 1.0 + y.iter().fold(0.0f64, |m, &v| m.max(v));
        let suspects: Vec<usize> = (0..op.n_cols())
            .filter(|&p| x[p] > 0.0 && x[p] < 1e-3 * scale)
            .collect();
        if suspects.is_empty() {
            return;
        }
        let rows: Vec<Vec<f64>> = (0..op.n_rows())
            .map(|r| {
                let mut row = vec![0.0; op.n_cols()];
                for &p in op.row_support(r) {
                    row[p] = 1.0;
                }
                row
            })
            .collect();
        for &p in &suspects {
            // Only covered pairs can be margin-bounded.
            if (0..op.n_rows()).all(|r| op.row_support(r).binary_search(&p).is_err()) {
                continue;
            }
            let mut c = vec![0.0; op.n_cols()];
            c[p] = -1.0;
            let Ok(lp) = LinearProgram::new(c, rows.clone(), y.to_vec()) else {
                continue;
            };
            match lp_solve(&lp, &LpOptions::default()) {
                Ok(sol) if sol.status == LpStatus::Optimal && -sol.objective <= 1e-7 * scale => {
                    x[p] = 0.0;
                }
                _ => {}
            }
        }
    }
}

/// KL projection of the rates onto the observation-consistent set, as an
/// E-step result.
pub fn estep_ipf(
    op: &ObservationOperator,
    rates: &RateMatrix,
    y: &[f64],
    opts: &EStepOptions,
) -> Result<EStepResult> {
    if rates.len() != op.n_cols() {
        return Err(Error::Contract(format!(
            "operator has {} columns, rates has {}",
            op.n_cols(),
            rates.len()
        )));
    }
    let engine = IpfEngine::new(op, opts.clone());
    let out = engine.project(rates.values(), y, None)?;
    Ok(EStepResult {
        expected: out.x,
        method: EStepMethod::Ipf,
        iterations: out.sweeps,
        residual: out.residual,
        converged: out.converged,
        log_likelihood: None,
    })
}

/// Generalized KL divergence `Σ a ln(a/b) - a + b` with the usual zero
/// conventions. Used by diagnostics and tests.
pub fn generalized_kl(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&ai, &bi)| {
            if ai == 0.0 {
                bi
            } else {
                ai * (ai / bi).ln() - ai + bi
            }
        })
        .sum()
}
