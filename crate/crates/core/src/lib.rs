//! Estimation and anomaly detection for partially observed Poisson traffic
//! networks.
//!
//! A network of exterior nodes exchanges messages along directed
//! source-destination (SD) pairs at unknown Poisson rates. Monitors see only
//! aggregates: per-node egress and ingress totals, flow totals through
//! pass-through interior nodes, and optionally a subset of pair counts
//! directly. This crate simulates such networks, reconstructs the latent rate
//! matrix from the aggregate observations, and tests the reconstruction
//! against a baseline to flag diverted, new, or missing flows.
//!
//! The pieces, bottom up:
//!
//! * [`net`] — topologies, rate matrices, traffic series, and the binary
//!   observation operator that reduces full traffic to what monitors see.
//! * [`sim`] — seeded generation of random networks, baselines, diversions,
//!   and Poisson traffic.
//! * [`engines`] — numerical machinery: conditional-expectation engines for
//!   the EM E-step (exact enumeration and an IPF-style KL projection) and a
//!   dense interior-point LP solver for the L1 projection.
//! * [`estimators`] — the five rate estimators (oracle, Poisson MLE via EM,
//!   hierarchical Poisson EM, minimum-relative-entropy L1 projection, and the
//!   MRE-initialized hierarchical EM).
//! * [`detect`] — divergence statistic, threshold calibration, ROC/AUC, and
//!   per-edge anomaly classification.
//! * [`experiments`] — the four end-to-end simulation studies with
//!   machine-readable CSV/JSON outputs.
//! * [`config`] — the JSON run configuration consumed by the CLI.

pub mod config;
pub mod detect;
pub mod engines;
pub mod estimators;
pub mod experiments;
pub mod net;
pub mod rng;
pub mod sim;

mod error;

pub use error::{Error, Result};
