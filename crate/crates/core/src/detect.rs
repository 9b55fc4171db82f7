//! Anomaly decision layer: divergence statistic, threshold calibration under
//! the null, ROC/AUC computation, and per-edge anomaly classification.
//!
//! A global anomaly is declared when the Frobenius divergence between the
//! estimated and baseline rates exceeds a threshold τ calibrated to a target
//! false-positive rate on statistics from diversion-free simulations of the
//! same network.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimators::{run_estimator, EstimatorSettings, EstimatorTag};
use crate::net::{apply_operator, build_operator, ObservationScheme, RateMatrix, SdPair};
use crate::sim::{sample_traffic_with_ticks, DiversionLabel, GroundTruth, SimConfig};
use crate::{Error, Result};

/// Detection tuning; defaults follow the reference study (5% false-positive
/// target, 200 null draws, edge tolerance a small fraction of the diversion
/// mean).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSettings {
    pub target_fpr: f64,
    pub edge_tol: f64,
    pub null_draws: usize,
}

impl Default for DetectSettings {
    fn default() -> Self {
        DetectSettings {
            target_fpr: 0.05,
            edge_tol: 0.1,
            null_draws: 200,
        }
    }
}

/// Per-edge classification relative to the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeLabel {
    Normal,
    NewEdge,
    Missing,
    Changed,
}

impl EdgeLabel {
    /// The diversion label this classification claims to have found.
    pub fn as_diversion(self) -> DiversionLabel {
        match self {
            EdgeLabel::Normal => DiversionLabel::None,
            EdgeLabel::NewEdge => DiversionLabel::NewEdge,
            EdgeLabel::Missing => DiversionLabel::Missing,
            EdgeLabel::Changed => DiversionLabel::Increased,
        }
    }
}

/// One pair's assessment inside a [`DetectionResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeDiff {
    pub pair: SdPair,
    pub label: EdgeLabel,
    pub baseline: f64,
    pub estimate: f64,
    /// `estimate - baseline`.
    pub change: f64,
}

/// Outcome of the global test plus the per-edge classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionResult {
    /// `‖Λ̂ - Λ0‖_F`.
    pub statistic: f64,
    pub threshold: f64,
    /// `statistic > threshold`.
    pub decision: bool,
    pub per_edge: Vec<EdgeDiff>,
}

/// Square root of the sum of squared per-pair rate differences.
pub fn frobenius_divergence(lambda_hat: &RateMatrix, baseline: &RateMatrix) -> Result<f64> {
    if lambda_hat.len() != baseline.len() {
        return Err(Error::Contract(format!(
            "estimate has {} pairs, baseline has {}",
            lambda_hat.len(),
            baseline.len()
        )));
    }
    Ok(lambda_hat
        .values()
        .iter()
        .zip(baseline.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Empirical `(1 - target_fpr)` quantile of the null statistics, using the
/// higher-interpolation convention `τ = sorted[ceil(q (n-1))]`. Applying τ
/// back to the same sample gives an empirical false-positive rate of at most
/// `target_fpr`.
pub fn calibrate_threshold(null_statistics: &[f64], target_fpr: f64) -> Result<f64> {
    if null_statistics.len() < 20 {
        return Err(Error::Calibration(format!(
            "need at least 20 null statistics, got {}",
            null_statistics.len()
        )));
    }
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(Error::Calibration(format!(
            "target_fpr = {target_fpr} must lie in (0, 1)"
        )));
    }
    if null_statistics.iter().any(|v| !v.is_finite()) {
        return Err(Error::Calibration("null statistics must be finite".into()));
    }
    let mut sorted = null_statistics.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = 1.0 - target_fpr;
    let idx = (q * (sorted.len() - 1) as f64).ceil() as usize;
    Ok(sorted[idx.min(sorted.len() - 1)])
}

/// A receiver-operating-characteristic curve with its area.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` points from (0, 0) to (1, 1); tied statistics move
    /// together.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Sweeps the decision threshold over all distinct statistic values.
///
/// `labels[i]` is true when trial `i` truly contains an anomaly. Both classes
/// must be present.
pub fn roc_curve(statistics: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if statistics.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} statistics vs {} labels",
            statistics.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Contract(
            "ROC needs both anomalous and null trials".into(),
        ));
    }
    if statistics.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("ROC statistics must be finite".into()));
    }

    let mut order: Vec<usize> = (0..statistics.len()).collect();
    order.sort_by(|&a, &b| statistics[b].partial_cmp(&statistics[a]).unwrap());

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let v = statistics[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && statistics[order[i]] == v {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

/// Labels each pair against the baseline.
///
/// `new_edge` when the baseline is zero and the estimate clears `edge_tol`;
/// `missing` when a baseline edge above `edge_tol` is estimated at or below
/// it; `changed` when the rate moved by more than `edge_tol`; `normal`
/// otherwise.
pub fn classify_edges(
    lambda_hat: &RateMatrix,
    baseline: &RateMatrix,
    edge_tol: f64,
) -> Result<Vec<EdgeLabel>> {
    if edge_tol < 0.0 {
        return Err(Error::Contract("edge_tol must be nonnegative".into()));
    }
    if lambda_hat.len() != baseline.len() {
        return Err(Error::Contract(format!(
            "estimate has {} pairs, baseline has {}",
            lambda_hat.len(),
            baseline.len()
        )));
    }
    Ok((0..lambda_hat.len())
        .map(|p| {
            let (l0, l) = (baseline.get(p), lambda_hat.get(p));
            if l0 == 0.0 && l > edge_tol {
                EdgeLabel::NewEdge
            } else if l0 > edge_tol && l <= edge_tol {
                EdgeLabel::Missing
            } else if (l - l0).abs() > edge_tol {
                EdgeLabel::Changed
            } else {
                EdgeLabel::Normal
            }
        })
        .collect())
}

/// Assembles the full detection report for one estimate.
pub fn detect(
    pairs: &[SdPair],
    lambda_hat: &RateMatrix,
    baseline: &RateMatrix,
    threshold: f64,
    edge_tol: f64,
) -> Result<DetectionResult> {
    if pairs.len() != lambda_hat.len() {
        return Err(Error::Contract(format!(
            "{} pairs vs {} estimates",
            pairs.len(),
            lambda_hat.len()
        )));
    }
    let statistic = frobenius_divergence(lambda_hat, baseline)?;
    let labels = classify_edges(lambda_hat, baseline, edge_tol)?;
    let per_edge = pairs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(p, (&pair, label))| EdgeDiff {
            pair,
            label,
            baseline: baseline.get(p),
            estimate: lambda_hat.get(p),
            change: lambda_hat.get(p) - baseline.get(p),
        })
        .collect();
    Ok(DetectionResult {
        statistic,
        threshold,
        decision: statistic > threshold,
        per_edge,
    })
}

/// Draws `null_draws` diversion-free traffic windows over the instance's own
/// topology and baseline, runs the estimator, and returns the divergence
/// statistics. Draws run in parallel; the output order is by draw index.
pub fn null_statistics(
    gt: &GroundTruth,
    scheme: &ObservationScheme,
    ticks: usize,
    tag: EstimatorTag,
    est_settings: &EstimatorSettings,
    detect_settings: &DetectSettings,
    seed: u64,
) -> Result<Vec<f64>> {
    let null_gt = GroundTruth {
        topology: gt.topology.clone(),
        baseline: gt.baseline.clone(),
        truth: gt.baseline.clone(),
        labels: vec![DiversionLabel::None; gt.topology.n_pairs()],
    };
    let op = build_operator(&gt.topology, scheme)?;
    let cfg = SimConfig {
        n_exterior: gt.topology.n_exterior(),
        n_interior: gt.topology.n_interior(),
        ticks,
        seed,
        ..Default::default()
    };
    (0..detect_settings.null_draws as u64)
        .into_par_iter()
        .map(|draw| {
            let traffic = sample_traffic_with_ticks(&cfg, &null_gt, ticks, draw)?;
            let obs = apply_operator(&op, &traffic)?;
            let mut settings = est_settings.clone();
            settings.seed = crate::rng::derive_seed(seed, &[draw]);
            let report = run_estimator(tag, &obs, &op, Some(&gt.baseline), Some(&traffic), &settings)?;
            frobenius_divergence(&report.lambda_hat, &gt.baseline)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rm(values: &[f64]) -> RateMatrix {
        RateMatrix::from_values(values.to_vec()).unwrap()
    }

    #[test]
    fn frobenius_basics() {
        assert_eq!(
            frobenius_divergence(&rm(&[1.0, 2.0]), &rm(&[1.0, 2.0])).unwrap(),
            0.0
        );
        assert_eq!(
            frobenius_divergence(&rm(&[4.0]), &rm(&[1.0])).unwrap(),
            3.0
        );
        // Differences (3, 4) give 5.
        assert_eq!(
            frobenius_divergence(&rm(&[3.0, 4.0]), &rm(&[0.0, 0.0])).unwrap(),
            5.0
        );
    }

    #[test]
    fn frobenius_triangle_inequality() {
        use rand::Rng;
        let mut rng = crate::rng::substream(23, crate::rng::Component::Init);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let draw = |rng: &mut rand_chacha::ChaCha12Rng| {
                rm(&(0..n).map(|_| rng.gen_range(0.0..5.0)).collect::<Vec<_>>())
            };
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let ab = frobenius_divergence(&a, &b).unwrap();
            let bc = frobenius_divergence(&b, &c).unwrap();
            let ac = frobenius_divergence(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
        }
    }

    #[test]
    fn threshold_quantile_examples() {
        let stats: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(calibrate_threshold(&stats, 0.05).unwrap(), 96.0);
        // Vanishing false-positive target pushes the threshold to the max.
        assert_eq!(calibrate_threshold(&stats, 1e-9).unwrap(), 100.0);
        // Determinism.
        assert_eq!(
            calibrate_threshold(&stats, 0.05).unwrap(),
            calibrate_threshold(&stats, 0.05).unwrap()
        );
    }

    #[test]
    fn threshold_errors() {
        let few = vec![1.0; 19];
        assert!(matches!(
            calibrate_threshold(&few, 0.05),
            Err(Error::Calibration(_))
        ));
        let stats = vec![1.0; 25];
        assert!(calibrate_threshold(&stats, 0.0).is_err());
        assert!(calibrate_threshold(&stats, 1.0).is_err());
    }

    #[test]
    fn calibration_controls_empirical_fpr() {
        use rand::Rng;
        let mut rng = crate::rng::substream(29, crate::rng::Component::Init);
        for _ in 0..50 {
            let n = rng.gen_range(20..400);
            let stats: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let fpr = rng.gen_range(0.01..0.5);
            let tau = calibrate_threshold(&stats, fpr).unwrap();
            let empirical =
                stats.iter().filter(|&&s| s > tau).count() as f64 / stats.len() as f64;
            assert!(
                empirical <= fpr + 1e-12,
                "empirical {empirical} vs target {fpr}"
            );
        }
    }

    #[test]
    fn roc_perfect_separation() {
        let stats = [0.1, 0.2, 0.9, 1.1];
        let labels = [false, false, true, true];
        let roc = roc_curve(&stats, &labels).unwrap();
        assert_eq!(roc.auc, 1.0);
    }

    #[test]
    fn roc_is_monotone_and_bounded() {
        use rand::Rng;
        let mut rng = crate::rng::substream(31, crate::rng::Component::Init);
        for _ in 0..50 {
            let n = rng.gen_range(4..200);
            let stats: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let roc = roc_curve(&stats, &labels).unwrap();
            assert!((0.0..=1.0).contains(&roc.auc));
            for w in roc.points.windows(2) {
                assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            assert_eq!(*roc.points.first().unwrap(), (0.0, 0.0));
            assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
        }
    }

    #[test]
    fn roc_near_half_for_uninformative_statistics() {
        use rand::Rng;
        let mut rng = crate::rng::substream(37, crate::rng::Component::Init);
        let n = 4000;
        let stats: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let roc = roc_curve(&stats, &labels).unwrap();
        assert!((roc.auc - 0.5).abs() < 0.1, "auc {}", roc.auc);
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(roc_curve(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn classify_rule_order() {
        let baseline = rm(&[0.0, 2.0, 1.0, 1.0, 0.0]);
        let estimate = rm(&[0.5, 0.0, 1.05, 2.5, 0.05]);
        let labels = classify_edges(&estimate, &baseline, 0.1).unwrap();
        assert_eq!(
            labels,
            vec![
                EdgeLabel::NewEdge,  // 0 -> 0.5
                EdgeLabel::Missing,  // 2 -> 0
                EdgeLabel::Normal,   // 1 -> 1.05
                EdgeLabel::Changed,  // 1 -> 2.5
                EdgeLabel::Normal,   // 0 -> 0.05 stays under tol
            ]
        );
    }

    #[test]
    fn classify_identical_is_all_normal() {
        let baseline = rm(&[0.0, 2.0, 1.0]);
        let labels = classify_edges(&baseline, &baseline, 0.1).unwrap();
        assert!(labels.iter().all(|&l| l == EdgeLabel::Normal));
    }

    #[test]
    fn detect_assembles_decision() {
        let pairs = vec![SdPair::new(0, 1), SdPair::new(1, 0)];
        let baseline = rm(&[1.0, 1.0]);
        let estimate = rm(&[1.0, 4.0]);
        let res = detect(&pairs, &estimate, &baseline, 2.0, 0.1).unwrap();
        assert_eq!(res.statistic, 3.0);
        assert!(res.decision);
        assert_eq!(res.per_edge[1].label, EdgeLabel::Changed);
        assert_eq!(res.per_edge[1].change, 3.0);

        let res = detect(&pairs, &estimate, &baseline, 3.5, 0.1).unwrap();
        assert!(!res.decision);
    }
}
