//! Random generation of topologies, baseline rates, diversions, and Poisson
//! traffic — the data source for every experiment.
//!
//! Generation is driven by per-component substreams derived from the config
//! seed and a trial index (see [`crate::rng`]), so a single component can be
//! re-drawn reproducibly and independent trials can run in parallel.
//!
//! The generated pair universe is always the full set of ordered pairs: the
//! true support is known to the simulator but not to the estimators, so
//! baselines and truths carry structural zeros off-support.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::net::{RateMatrix, Topology, TrafficSeries};
use crate::rng::{trial_substream, Component};
use crate::{Error, Result};

/// Simulation parameters. Defaults reproduce the reference configuration:
/// 10 exterior nodes, a 65% chance that any ordered pair carries baseline
/// traffic, Gamma(1.75, 1) baseline rates, Gamma(0.75, 1) diversion rates,
/// and a 20% diversion probability per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_exterior: u32,
    pub n_interior: u32,
    /// Probability an ordered pair is in the baseline support.
    pub p_edge: f64,
    /// Baseline rate distribution as (shape, rate).
    pub baseline_gamma: (f64, f64),
    /// Diversion magnitude distribution as (shape, rate).
    pub diversion_gamma: (f64, f64),
    /// Probability each ordered pair receives a diversion.
    pub p_diversion: f64,
    /// Given a diversion on an existing baseline edge, probability it is a
    /// removal rather than a rate increase.
    pub p_missing_given_diversion: f64,
    /// Probability a pair routes through one interior node (when any exist).
    pub p_route: f64,
    /// Observation window length T.
    pub ticks: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_exterior: 10,
            n_interior: 0,
            p_edge: 0.65,
            baseline_gamma: (1.75, 1.0),
            diversion_gamma: (0.75, 1.0),
            p_diversion: 0.2,
            p_missing_given_diversion: 0.25,
            p_route: 0.5,
            ticks: 150,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_exterior < 2 {
            return Err(Error::Config("need at least 2 exterior nodes".into()));
        }
        for (name, p) in [
            ("p_edge", self.p_edge),
            ("p_diversion", self.p_diversion),
            ("p_missing_given_diversion", self.p_missing_given_diversion),
            ("p_route", self.p_route),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, (shape, rate)) in [
            ("baseline_gamma", self.baseline_gamma),
            ("diversion_gamma", self.diversion_gamma),
        ] {
            if shape <= 0.0 || rate <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} = ({shape}, {rate}) must have positive shape and rate"
                )));
            }
        }
        if self.ticks == 0 {
            return Err(Error::Config("ticks must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a diversion did to a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiversionLabel {
    None,
    NewEdge,
    Increased,
    Missing,
}

/// A simulated network instance: baseline, truth with diversions applied,
/// and the per-pair labels that detection tries to recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub topology: Topology,
    pub baseline: RateMatrix,
    pub truth: RateMatrix,
    pub labels: Vec<DiversionLabel>,
}

impl GroundTruth {
    /// Checks the label/rate consistency invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.topology.n_pairs();
        if self.baseline.len() != n || self.truth.len() != n || self.labels.len() != n {
            return Err(Error::Contract("ground truth domains disagree".into()));
        }
        for p in 0..n {
            let (l0, l, lab) = (self.baseline.get(p), self.truth.get(p), self.labels[p]);
            let ok = match lab {
                DiversionLabel::None => l == l0,
                DiversionLabel::Missing => l == 0.0 && l0 > 0.0,
                DiversionLabel::NewEdge => l0 == 0.0 && l > 0.0,
                DiversionLabel::Increased => l0 > 0.0 && l > l0,
            };
            if !ok {
                return Err(Error::Contract(format!(
                    "pair {p}: label {lab:?} inconsistent with baseline {l0}, truth {l}"
                )));
            }
        }
        Ok(())
    }

    pub fn has_diversion(&self) -> bool {
        self.labels.iter().any(|&l| l != DiversionLabel::None)
    }
}

fn gamma_draw(rng: &mut ChaCha12Rng, (shape, rate): (f64, f64)) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("validated gamma parameters")
        .sample(rng)
}

/// Draws baseline support and rates, applies diversions, and assigns routes.
///
/// Each ordered pair enters the baseline support independently with
/// probability `p_edge`; independently, with probability `p_diversion` the
/// pair receives a diversion — a removal or an additive increase on an
/// existing edge, a new edge otherwise.
pub fn gen_ground_truth(cfg: &SimConfig, trial: u64) -> Result<GroundTruth> {
    cfg.validate()?;
    let mut topo = Topology::full(cfg.n_exterior, cfg.n_interior);
    if cfg.n_interior > 0 {
        let mut route_rng = trial_substream(cfg.seed, trial, Component::Routes);
        topo = assign_routes(&topo, cfg.n_interior, cfg.p_route, &mut route_rng)?;
    }
    let n = topo.n_pairs();

    let mut support_rng = trial_substream(cfg.seed, trial, Component::Topology);
    let support: Vec<bool> = (0..n).map(|_| support_rng.gen_bool(cfg.p_edge)).collect();

    let mut rate_rng = trial_substream(cfg.seed, trial, Component::Rates);
    let mut baseline = RateMatrix::zeros(n);
    for p in 0..n {
        if support[p] {
            baseline.set(p, gamma_draw(&mut rate_rng, cfg.baseline_gamma));
        }
    }

    let mut div_rng = trial_substream(cfg.seed, trial, Component::Diversions);
    let mut truth = baseline.clone();
    let mut labels = vec![DiversionLabel::None; n];
    for p in 0..n {
        if !div_rng.gen_bool(cfg.p_diversion) {
            continue;
        }
        if support[p] {
            if div_rng.gen_bool(cfg.p_missing_given_diversion) {
                truth.set(p, 0.0);
                labels[p] = DiversionLabel::Missing;
            } else {
                truth.set(p, truth.get(p) + gamma_draw(&mut div_rng, cfg.diversion_gamma));
                labels[p] = DiversionLabel::Increased;
            }
        } else {
            truth.set(p, gamma_draw(&mut div_rng, cfg.diversion_gamma));
            labels[p] = DiversionLabel::NewEdge;
        }
    }

    let gt = GroundTruth {
        topology: topo,
        baseline,
        truth,
        labels,
    };
    gt.validate()?;
    Ok(gt)
}

/// Per-pair Poisson counts for `cfg.ticks` ticks, independent across pairs
/// and ticks.
pub fn sample_traffic(cfg: &SimConfig, truth: &GroundTruth, trial: u64) -> Result<TrafficSeries> {
    sample_traffic_with_ticks(cfg, truth, cfg.ticks, trial)
}

/// Same as [`sample_traffic`] with an explicit window length (studies sweep
/// over T).
pub fn sample_traffic_with_ticks(
    cfg: &SimConfig,
    truth: &GroundTruth,
    ticks: usize,
    trial: u64,
) -> Result<TrafficSeries> {
    if ticks == 0 {
        return Err(Error::Contract("ticks must be >= 1".into()));
    }
    let n = truth.topology.n_pairs();
    let mut rng = trial_substream(cfg.seed, trial, Component::Traffic);
    let samplers: Vec<Option<Poisson<f64>>> = (0..n)
        .map(|p| {
            let l = truth.truth.get(p);
            (l > 0.0).then(|| Poisson::new(l).expect("positive rate"))
        })
        .collect();
    let mut counts = Vec::with_capacity(ticks);
    for _ in 0..ticks {
        counts.push(
            samplers
                .iter()
                .map(|s| s.as_ref().map_or(0, |d| d.sample(&mut rng) as u64))
                .collect(),
        );
    }
    TrafficSeries::new(counts)
}

/// Routes each pair through one uniformly chosen interior node with
/// probability `p_route`, directly otherwise.
pub fn assign_routes(
    topology: &Topology,
    n_interior: u32,
    p_route: f64,
    rng: &mut ChaCha12Rng,
) -> Result<Topology> {
    if !(0.0..=1.0).contains(&p_route) {
        return Err(Error::Config(format!("p_route = {p_route} is not a probability")));
    }
    let routes: Vec<Vec<u32>> = (0..topology.n_pairs())
        .map(|_| {
            if n_interior > 0 && rng.gen_bool(p_route) {
                vec![rng.gen_range(0..n_interior)]
            } else {
                Vec::new()
            }
        })
        .collect();
    Topology::with_routes(
        topology.n_exterior(),
        n_interior,
        topology.pairs().to_vec(),
        routes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{apply_operator, build_operator, ObservationScheme};

    #[test]
    fn paper_config_support_and_rate_statistics() {
        let cfg = SimConfig::default();
        let trials = 200;
        let mut edge_count = 0usize;
        let mut rate_sum = 0.0;
        let mut rate_n = 0usize;
        for trial in 0..trials {
            let gt = gen_ground_truth(&cfg, trial).unwrap();
            for p in 0..gt.topology.n_pairs() {
                if gt.baseline.get(p) > 0.0 {
                    edge_count += 1;
                    rate_sum += gt.baseline.get(p);
                    rate_n += 1;
                }
            }
        }
        // Binomial(90, 0.65) per trial: mean 58.5, sd 4.52; +-3 sd of the
        // 200-trial mean.
        let mean_edges = edge_count as f64 / trials as f64;
        assert!(
            (mean_edges - 58.5).abs() < 3.0 * 4.52 / (trials as f64).sqrt(),
            "mean baseline edges {mean_edges}"
        );
        // Gamma(1.75, 1) mean 1.75, var 1.75.
        let mean_rate = rate_sum / rate_n as f64;
        assert!(
            (mean_rate - 1.75).abs() < 3.0 * (1.75f64 / rate_n as f64).sqrt(),
            "mean baseline rate {mean_rate}"
        );
    }

    #[test]
    fn no_diversions_means_truth_equals_baseline() {
        let cfg = SimConfig {
            p_diversion: 0.0,
            ..Default::default()
        };
        let gt = gen_ground_truth(&cfg, 3).unwrap();
        assert_eq!(gt.baseline, gt.truth);
        assert!(gt.labels.iter().all(|&l| l == DiversionLabel::None));
        assert!(!gt.has_diversion());
    }

    #[test]
    fn degenerate_limit_everything_missing() {
        let cfg = SimConfig {
            p_edge: 1.0,
            p_diversion: 1.0,
            p_missing_given_diversion: 1.0,
            ..Default::default()
        };
        let gt = gen_ground_truth(&cfg, 0).unwrap();
        assert!(gt.labels.iter().all(|&l| l == DiversionLabel::Missing));
        assert!(gt.truth.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_frequencies_match_probabilities() {
        let cfg = SimConfig {
            n_exterior: 8,
            ..Default::default()
        };
        let mut counts = [0usize; 4];
        let mut total = 0usize;
        for trial in 0..40 {
            let gt = gen_ground_truth(&cfg, trial).unwrap();
            for &l in &gt.labels {
                counts[match l {
                    DiversionLabel::None => 0,
                    DiversionLabel::NewEdge => 1,
                    DiversionLabel::Increased => 2,
                    DiversionLabel::Missing => 3,
                }] += 1;
                total += 1;
            }
        }
        let total = total as f64;
        let sd = |p: f64| 3.0 * (p * (1.0 - p) / total).sqrt();
        // new_edge: no support (0.35) and diverted (0.2).
        let p_new = 0.35 * 0.2;
        // increased: support, diverted, not removed.
        let p_inc = 0.65 * 0.2 * 0.75;
        let p_miss = 0.65 * 0.2 * 0.25;
        assert!(total >= 1000.0);
        assert!((counts[1] as f64 / total - p_new).abs() < sd(p_new));
        assert!((counts[2] as f64 / total - p_inc).abs() < sd(p_inc));
        assert!((counts[3] as f64 / total - p_miss).abs() < sd(p_miss));
    }

    #[test]
    fn zero_rate_pairs_never_send() {
        let cfg = SimConfig {
            n_exterior: 4,
            p_edge: 0.5,
            p_diversion: 0.0,
            ticks: 50,
            ..Default::default()
        };
        let gt = gen_ground_truth(&cfg, 1).unwrap();
        let traffic = sample_traffic(&cfg, &gt, 1).unwrap();
        for p in 0..gt.topology.n_pairs() {
            if gt.truth.get(p) == 0.0 {
                assert!(traffic.iter().all(|tick| tick[p] == 0));
            }
        }
    }

    #[test]
    fn traffic_sample_mean_converges() {
        let topo = Topology::full(2, 0);
        let gt = GroundTruth {
            baseline: RateMatrix::from_values(vec![4.0, 4.0]).unwrap(),
            truth: RateMatrix::from_values(vec![4.0, 4.0]).unwrap(),
            labels: vec![DiversionLabel::None; 2],
            topology: topo,
        };
        let cfg = SimConfig {
            n_exterior: 2,
            seed: 9,
            ..Default::default()
        };
        let traffic = sample_traffic_with_ticks(&cfg, &gt, 10_000, 0).unwrap();
        let mean: f64 =
            traffic.iter().map(|t| t[0] as f64).sum::<f64>() / traffic.ticks() as f64;
        assert!((3.9..=4.1).contains(&mean), "sample mean {mean}");
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = SimConfig::default();
        let a = gen_ground_truth(&cfg, 7).unwrap();
        let b = gen_ground_truth(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let ta = sample_traffic(&cfg, &a, 7).unwrap();
        let tb = sample_traffic(&cfg, &b, 7).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn route_assignment_limits() {
        let topo = Topology::full(4, 0);
        let mut rng = crate::rng::substream(5, crate::rng::Component::Routes);
        let no_interior = assign_routes(&topo, 0, 0.5, &mut rng).unwrap();
        assert!(no_interior.routes().iter().all(|r| r.is_empty()));

        let topo1 = Topology::full(4, 1);
        let all_routed = assign_routes(&topo1, 1, 1.0, &mut rng).unwrap();
        assert!(all_routed.routes().iter().all(|r| r == &[0]));
        // Flow through the single interior node sees the whole network.
        let op = build_operator(&all_routed, &ObservationScheme::minimal(&all_routed)).unwrap();
        let flow_row = op
            .rows()
            .iter()
            .position(|r| matches!(r, crate::net::RowKind::Flow { .. }))
            .unwrap();
        let counts: Vec<u64> = (0..all_routed.n_pairs() as u64).collect();
        let total: u64 = counts.iter().sum();
        let obs = apply_operator(&op, &TrafficSeries::new(vec![counts]).unwrap()).unwrap();
        assert_eq!(obs.tick(0)[flow_row], total);
    }

    #[test]
    fn ground_truth_json_round_trip() {
        let gt = gen_ground_truth(&SimConfig::default(), 0).unwrap();
        let json = serde_json::to_string(&gt).unwrap();
        let back: GroundTruth = serde_json::from_str(&json).unwrap();
        assert_eq!(gt, back);
    }
}
