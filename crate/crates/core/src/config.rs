//! The JSON run configuration consumed by the CLI.
//!
//! Parsing is strict: unknown keys anywhere in the document are rejected, so
//! typos in experiment sweeps fail loudly instead of silently using defaults.
//! Every field has a default; the defaults are desk-scale (6 exterior nodes,
//! 50 trials) and [`RunConfig::apply_paper_scale`] restores the reference
//! configuration (10 nodes, 200 trials, T = 150).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::DetectSettings;
use crate::estimators::{EstimatorSettings, EstimatorTag};
use crate::experiments::ExperimentSpec;
use crate::net::{ObservationScheme, ObservationSeries, RateMatrix, SdPair, Topology, TrafficSeries};
use crate::sim::{GroundTruth, SimConfig};
use crate::{Error, Result};

/// Scheme description that scales with the topology: scalar monitor switches
/// plus an explicit list of directly observed pairs. Studies that sweep
/// observed-edge fractions pick their own per-trial subsets instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub monitor_egress: bool,
    pub monitor_ingress: bool,
    pub monitor_flows: bool,
    pub observed_pairs: Vec<SdPair>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            monitor_egress: true,
            monitor_ingress: true,
            monitor_flows: true,
            observed_pairs: Vec::new(),
        }
    }
}

impl SchemeConfig {
    /// Expands the switches into a per-node scheme for a concrete topology.
    pub fn build(&self, topology: &Topology) -> Result<ObservationScheme> {
        let scheme = ObservationScheme {
            monitor_egress: vec![self.monitor_egress; topology.n_exterior() as usize],
            monitor_ingress: vec![self.monitor_ingress; topology.n_exterior() as usize],
            monitor_flows: vec![self.monitor_flows; topology.n_interior() as usize],
            observed_pairs: self.observed_pairs.clone(),
        };
        for &pair in &scheme.observed_pairs {
            if topology.pair_index(pair).is_none() {
                return Err(Error::Config(format!(
                    "observed pair ({}, {}) is not in the topology",
                    pair.src, pair.dst
                )));
            }
        }
        Ok(scheme)
    }
}

/// Top-level configuration document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub scheme: SchemeConfig,
    /// Estimator settings by tag; the `"default"` entry applies to any tag
    /// without its own entry.
    pub estimators: BTreeMap<String, EstimatorSettings>,
    pub detect: DetectSettings,
    pub study: ExperimentSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimConfig {
                n_exterior: 6,
                ticks: 100,
                ..Default::default()
            },
            scheme: SchemeConfig::default(),
            estimators: BTreeMap::new(),
            detect: DetectSettings::default(),
            study: ExperimentSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file. A missing path yields the defaults
    /// only when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let config = match path {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let config: RunConfig = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                config
            }
            None => RunConfig::default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.study.validate()?;
        for key in self.estimators.keys() {
            if key != "default" {
                key.parse::<EstimatorTag>()?;
            }
        }
        for settings in self.estimators.values() {
            settings.validate()?;
        }
        if !(self.detect.target_fpr > 0.0 && self.detect.target_fpr < 1.0) {
            return Err(Error::Config(format!(
                "detect.target_fpr = {} must lie in (0, 1)",
                self.detect.target_fpr
            )));
        }
        if self.detect.edge_tol < 0.0 {
            return Err(Error::Config("detect.edge_tol must be nonnegative".into()));
        }
        Ok(())
    }

    /// Resolved settings for one estimator: its own entry, else `"default"`,
    /// else the built-in defaults.
    pub fn settings_for(&self, tag: EstimatorTag) -> EstimatorSettings {
        self.estimators
            .get(tag.name())
            .or_else(|| self.estimators.get("default"))
            .cloned()
            .unwrap_or_default()
    }

    /// Restores the reference scale: 10 exterior nodes, T = 150, 200 trials.
    pub fn apply_paper_scale(&mut self) {
        self.sim.n_exterior = 10;
        self.sim.ticks = 150;
        self.study.trials = 200;
    }

    /// Overrides the root seed everywhere.
    pub fn apply_seed(&mut self, seed: u64) {
        self.sim.seed = seed;
    }
}

/// The document `simulate` writes and `estimate`/`detect` read.
///
/// Topology, baseline, scheme, and observations are always present — they
/// are what an analyst would actually hold. Ground truth and raw traffic are
/// simulation-only extras and can be stripped (`--observables-only`); the
/// oracle estimator requires the traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationArtifact {
    pub config: SimConfig,
    pub trial: u64,
    pub topology: Topology,
    pub baseline: RateMatrix,
    pub scheme: ObservationScheme,
    pub observations: ObservationSeries,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<TrafficSeries>,
}

impl SimulationArtifact {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let artifact: SimulationArtifact = serde_json::from_str(&text)
            .map_err(|e| Error::Contract(format!("{}: {e}", path.display())))?;
        if artifact.baseline.len() != artifact.topology.n_pairs() {
            return Err(Error::Contract(format!(
                "{}: baseline length does not match topology",
                path.display()
            )));
        }
        Ok(artifact)
    }
}
