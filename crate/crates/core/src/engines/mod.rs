//! Numerical machinery shared by the estimators.
//!
//! * [`estep`] — conditional-expectation engines for the EM E-step: an exact
//!   enumerator for tiny instances and an IPF-style KL projection that scales.
//! * [`lp`] — a dense primal-dual interior-point linear-programming solver
//!   with a textbook Phase-1 and redundancy elimination.
//! * [`l1`] — assembly of the L1-projection LP used by the
//!   minimum-relative-entropy estimator.

pub mod estep;
pub mod l1;
pub mod lp;

pub use estep::{estep_exact, estep_ipf, EStepMethod, EStepOptions, EStepResult, IpfEngine, IpfOutcome};
pub use l1::build_l1_projection_lp;
pub use lp::{lp_solve, LinearProgram, LpOptions, LpSolution, LpStatus};
