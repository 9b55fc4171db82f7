//! The four end-to-end simulation studies, with machine-readable outputs.
//!
//! Each study draws fresh networks per trial from per-trial substreams, runs
//! trials in parallel, and reduces results in fixed trial order with pairwise
//! summation, so outputs are byte-identical across runs and across thread
//! counts. Every emitted table carries the root seed, trial count, and a
//! hash of the resolved configuration.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::detect::{
    calibrate_threshold, detect, frobenius_divergence, null_statistics, DetectionResult, RocCurve,
};
use crate::estimators::{
    mre_hipois, run_estimator, EstimatorTag, InitMode,
};
use crate::net::{apply_operator, build_operator, ObservationScheme, SdPair};
use crate::rng::{derive_seed, indexed_substream, Component};
use crate::sim::{gen_ground_truth, sample_traffic_with_ticks, DiversionLabel};
use crate::{Error, Result};

/// Which study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    MseVsEdges,
    EmIterations,
    RocOverT,
    SingleInstance,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse_vs_edges" => Ok(Study::MseVsEdges),
            "em_iterations" => Ok(Study::EmIterations),
            "roc_over_t" => Ok(Study::RocOverT),
            "single_instance" => Ok(Study::SingleInstance),
            other => Err(Error::Config(format!(
                "unknown study '{other}' (expected mse_vs_edges, em_iterations, roc_over_t, single_instance)"
            ))),
        }
    }
}

/// Study parameters: sweeps, estimator list, trial count.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: Study,
    /// Edge-observation fractions, ascending.
    pub fractions: Vec<f64>,
    /// Observation-window lengths, ascending.
    pub ticks_sweep: Vec<usize>,
    pub estimators: Vec<EstimatorTag>,
    pub trials: usize,
    /// Trial index used by the single-instance study.
    pub instance_trial: u64,
    /// Output directory; the CLI `--out` flag overrides it.
    pub out_dir: Option<String>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            kind: Study::MseVsEdges,
            fractions: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ticks_sweep: vec![10, 50, 150],
            estimators: EstimatorTag::ALL.to_vec(),
            trials: 50,
            instance_trial: 0,
            out_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.fractions.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("fractions must be ascending".into()));
        }
        if self.ticks_sweep.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("ticks_sweep must be ascending".into()));
        }
        if self
            .fractions
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Deterministic sum independent of accumulation threading: fixed-order
/// pairwise reduction over the slice.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
        }
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Provenance stamp attached to every output table.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub trials: usize,
    pub settings_hash: String,
}

fn settings_hash(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    hex[..16].to_string()
}

fn provenance(config: &RunConfig) -> Provenance {
    Provenance {
        seed: config.sim.seed,
        trials: config.study.trials,
        settings_hash: settings_hash(config),
    }
}

/// Uniform subset of `k` pair indices, drawn without replacement.
fn observed_subset(n_pairs: usize, fraction: f64, seed: u64, trial: u64, cell: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let k = (fraction * n_pairs as f64).ceil() as usize;
    let k = k.min(n_pairs);
    let mut rng = indexed_substream(seed, trial, cell, Component::Subset);
    let mut indices: Vec<usize> = (0..n_pairs).collect();
    indices.shuffle(&mut rng);
    indices.truncate(k);
    indices.sort_unstable();
    indices
}

fn scheme_with_observed(
    base: &ObservationScheme,
    pairs: &[SdPair],
    observed: &[usize],
) -> ObservationScheme {
    let mut scheme = base.clone();
    scheme.observed_pairs = observed.iter().map(|&i| pairs[i]).collect();
    scheme
}

// ---------------------------------------------------------------------------
// MSE vs fraction of edges observed
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MseCell {
    pub fraction: f64,
    pub estimator: String,
    pub mean_mse: f64,
    pub std_err: f64,
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MseStudy {
    pub provenance: Provenance,
    pub cells: Vec<MseCell>,
}

impl MseStudy {
    /// Cell lookup by fraction and estimator name.
    pub fn cell(&self, fraction: f64, estimator: &str) -> Option<&MseCell> {
        self.cells
            .iter()
            .find(|c| c.fraction == fraction && c.estimator == estimator)
    }
}

/// Mean squared per-pair rate error against the truth, averaged over trials,
/// per (fraction observed, estimator) cell. Networks and traffic are paired
/// across fractions: trial `i` reuses the same instance at every fraction and
/// only the observed subset changes.
pub fn run_mse_vs_edges(config: &RunConfig) -> Result<MseStudy> {
    let spec = &config.study;
    spec.validate()?;
    let sim = &config.sim;
    let trials = spec.trials;

    struct TrialCell {
        mse: Vec<Option<f64>>,
    }

    let mut cells = Vec::new();
    for (f_idx, &fraction) in spec.fractions.iter().enumerate() {
        let per_trial: Vec<TrialCell> = (0..trials as u64)
            .into_par_iter()
            .map(|trial| -> Result<TrialCell> {
                let gt = gen_ground_truth(sim, trial)?;
                let traffic = sample_traffic_with_ticks(sim, &gt, sim.ticks, trial)?;
                let n = gt.topology.n_pairs();
                let observed =
                    observed_subset(n, fraction, sim.seed, trial, f_idx as u64);
                let base = config.scheme.build(&gt.topology)?;
                let scheme = scheme_with_observed(&base, gt.topology.pairs(), &observed);
                let op = build_operator(&gt.topology, &scheme)?;
                let obs = apply_operator(&op, &traffic)?;

                let mse = spec
                    .estimators
                    .iter()
                    .enumerate()
                    .map(|(e_idx, &tag)| {
                        let mut settings = config.settings_for(tag);
                        settings.seed =
                            derive_seed(sim.seed, &[1, f_idx as u64, trial, e_idx as u64]);
                        run_estimator(tag, &obs, &op, Some(&gt.baseline), Some(&traffic), &settings)
                            .ok()
                            .map(|rep| {
                                let sq: Vec<f64> = (0..n)
                                    .map(|p| {
                                        let d = rep.lambda_hat.get(p) - gt.truth.get(p);
                                        d * d
                                    })
                                    .collect();
                                pairwise_sum(&sq) / n as f64
                            })
                    })
                    .collect();
                Ok(TrialCell { mse })
            })
            .collect::<Result<Vec<_>>>()?;

        for (e_idx, &tag) in spec.estimators.iter().enumerate() {
            let values: Vec<f64> = per_trial
                .iter()
                .filter_map(|t| t.mse[e_idx])
                .collect();
            let failures = trials - values.len();
            let (mean, se) = mean_and_stderr(&values);
            cells.push(MseCell {
                fraction,
                estimator: tag.name().to_string(),
                mean_mse: mean,
                std_err: se,
                trials: values.len(),
                failures,
            });
        }
    }

    Ok(MseStudy {
        provenance: provenance(config),
        cells,
    })
}

// ---------------------------------------------------------------------------
// EM iterations to convergence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct IterCell {
    pub ticks: usize,
    pub fraction: f64,
    pub init: String,
    pub mean_iterations: f64,
    pub std_err: f64,
    /// Runs that stopped at `em_max_iter` (their counts enter the mean
    /// censored at the cap).
    pub censored: usize,
    pub runs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterStudy {
    pub provenance: Provenance,
    pub cells: Vec<IterCell>,
}

impl IterStudy {
    pub fn cell(&self, ticks: usize, fraction: f64, init: &str) -> Option<&IterCell> {
        self.cells
            .iter()
            .find(|c| c.ticks == ticks && c.fraction == fraction && c.init == init)
    }
}

/// Mean EM iterations to convergence for the hierarchical model under random
/// initialization (every restart counts as a run) versus MRE initialization.
pub fn run_em_iterations(config: &RunConfig) -> Result<IterStudy> {
    let spec = &config.study;
    spec.validate()?;
    let sim = &config.sim;
    let trials = spec.trials;

    struct TrialIters {
        random: Vec<(usize, bool)>,
        mre: (usize, bool),
    }

    let mut cells = Vec::new();
    for (t_idx, &ticks) in spec.ticks_sweep.iter().enumerate() {
        for (f_idx, &fraction) in spec.fractions.iter().enumerate() {
            let cell_tag = (t_idx * 101 + f_idx) as u64;
            let per_trial: Vec<TrialIters> = (0..trials as u64)
                .into_par_iter()
                .map(|trial| -> Result<TrialIters> {
                    let gt = gen_ground_truth(sim, trial)?;
                    let traffic = sample_traffic_with_ticks(sim, &gt, ticks, trial)?;
                    let n = gt.topology.n_pairs();
                    let observed = observed_subset(n, fraction, sim.seed, trial, cell_tag);
                    let base = config.scheme.build(&gt.topology)?;
                    let scheme = scheme_with_observed(&base, gt.topology.pairs(), &observed);
                    let op = build_operator(&gt.topology, &scheme)?;
                    let obs = apply_operator(&op, &traffic)?;

                    let mut settings = config.settings_for(EstimatorTag::Hipois);
                    settings.init_mode = InitMode::Random;
                    settings.seed = derive_seed(sim.seed, &[2, cell_tag, trial]);
                    let random_rep =
                        crate::estimators::hipois_em(&obs, &op, &gt.baseline, &settings)?;
                    let cap = settings.em_max_iter;
                    let random = random_rep
                        .restart_iterations
                        .iter()
                        .map(|&it| (it, it >= cap))
                        .collect();

                    let mut settings = config.settings_for(EstimatorTag::MreHipois);
                    settings.seed = derive_seed(sim.seed, &[3, cell_tag, trial]);
                    let mre_rep = mre_hipois(&obs, &op, &gt.baseline, &settings)?;
                    let mre = (mre_rep.iterations, mre_rep.iterations >= settings.em_max_iter);

                    Ok(TrialIters { random, mre })
                })
                .collect::<Result<Vec<_>>>()?;

            for (init, runs) in [
                (
                    "random",
                    per_trial
                        .iter()
                        .flat_map(|t| t.random.iter().copied())
                        .collect::<Vec<_>>(),
                ),
                (
                    "mre",
                    per_trial.iter().map(|t| t.mre).collect::<Vec<_>>(),
                ),
            ] {
                let values: Vec<f64> = runs.iter().map(|&(it, _)| it as f64).collect();
                let censored = runs.iter().filter(|&&(_, c)| c).count();
                let (mean, se) = mean_and_stderr(&values);
                cells.push(IterCell {
                    ticks,
                    fraction,
                    init: init.to_string(),
                    mean_iterations: mean,
                    std_err: se,
                    censored,
                    runs: runs.len(),
                });
            }
        }
    }

    Ok(IterStudy {
        provenance: provenance(config),
        cells,
    })
}

// ---------------------------------------------------------------------------
// ROC over observation time
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RocPerTicks {
    pub ticks: usize,
    pub auc: f64,
    pub curve: RocCurve,
    pub statistics: Vec<f64>,
    pub labels: Vec<bool>,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RocStudy {
    pub provenance: Provenance,
    pub per_ticks: Vec<RocPerTicks>,
}

/// Detection performance of the combined estimator as the observation window
/// grows. Half the trials (even indices) are diversion-free, half carry the
/// configured diversion probability; the statistic is the Frobenius
/// divergence of the combined-estimator reconstruction from the baseline.
pub fn run_roc_over_t(config: &RunConfig) -> Result<RocStudy> {
    let spec = &config.study;
    spec.validate()?;
    let trials = spec.trials;

    let mut per_ticks = Vec::new();
    for &ticks in &spec.ticks_sweep {
        let outcomes: Vec<(Option<f64>, bool)> = (0..trials as u64)
            .into_par_iter()
            .map(|trial| -> Result<(Option<f64>, bool)> {
                // Even trials form the null arm. Same seed and trial index
                // mean both arms share topology and baseline draws.
                let mut sim = config.sim.clone();
                if trial % 2 == 0 {
                    sim.p_diversion = 0.0;
                }
                let gt = gen_ground_truth(&sim, trial)?;
                let traffic = sample_traffic_with_ticks(&sim, &gt, ticks, trial)?;
                let scheme = config.scheme.build(&gt.topology)?;
                let op = build_operator(&gt.topology, &scheme)?;
                let obs = apply_operator(&op, &traffic)?;

                let mut settings = config.settings_for(EstimatorTag::MreHipois);
                settings.seed = derive_seed(sim.seed, &[4, ticks as u64, trial]);
                let stat = mre_hipois(&obs, &op, &gt.baseline, &settings)
                    .ok()
                    .map(|rep| frobenius_divergence(&rep.lambda_hat, &gt.baseline))
                    .transpose()?;
                Ok((stat, gt.has_diversion()))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut statistics = Vec::new();
        let mut labels = Vec::new();
        let mut failures = 0usize;
        for (stat, label) in outcomes {
            match stat {
                Some(s) => {
                    statistics.push(s);
                    labels.push(label);
                }
                None => failures += 1,
            }
        }
        let curve = crate::detect::roc_curve(&statistics, &labels)?;
        per_ticks.push(RocPerTicks {
            ticks,
            auc: curve.auc,
            curve,
            statistics,
            labels,
            failures,
        });
    }

    Ok(RocStudy {
        provenance: provenance(config),
        per_ticks,
    })
}

// ---------------------------------------------------------------------------
// Single-instance network diff
// ---------------------------------------------------------------------------

/// One rendered edge of the baseline or estimated graph.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: u32,
    pub dst: u32,
    pub rate: f64,
}

/// Full pipeline output on one seeded instance: graphs, global decision, and
/// the per-edge anomaly classification with the injected truth for reference.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceDiff {
    pub provenance: Provenance,
    pub trial: u64,
    pub detection: DetectionResult,
    pub baseline_edges: Vec<EdgeRecord>,
    pub estimated_edges: Vec<EdgeRecord>,
    /// Pairs classified as anomalous, with their classification.
    pub anomalies: Vec<crate::detect::EdgeDiff>,
    /// Injected diversions, for assessing the classification.
    pub injected: Vec<(SdPair, DiversionLabel)>,
}

/// Runs the full pipeline (simulate, estimate with the combined model,
/// calibrate, detect, classify) on the spec's frozen instance.
pub fn run_single_instance(config: &RunConfig) -> Result<InstanceDiff> {
    let spec = &config.study;
    spec.validate()?;
    let sim = &config.sim;
    let trial = spec.instance_trial;

    let gt = gen_ground_truth(sim, trial)?;
    let traffic = sample_traffic_with_ticks(sim, &gt, sim.ticks, trial)?;
    let scheme = config.scheme.build(&gt.topology)?;
    let op = build_operator(&gt.topology, &scheme)?;
    let obs = apply_operator(&op, &traffic)?;

    let mut settings = config.settings_for(EstimatorTag::MreHipois);
    settings.seed = derive_seed(sim.seed, &[5, trial]);
    let report = mre_hipois(&obs, &op, &gt.baseline, &settings)?;

    let nulls = null_statistics(
        &gt,
        &scheme,
        sim.ticks,
        EstimatorTag::MreHipois,
        &settings,
        &config.detect,
        derive_seed(sim.seed, &[6, trial]),
    )?;
    let threshold = calibrate_threshold(&nulls, config.detect.target_fpr)?;
    let detection = detect(
        gt.topology.pairs(),
        &report.lambda_hat,
        &gt.baseline,
        threshold,
        config.detect.edge_tol,
    )?;

    let edges = |rates: &crate::net::RateMatrix, tol: f64| -> Vec<EdgeRecord> {
        gt.topology
            .pairs()
            .iter()
            .enumerate()
            .filter(|&(p, _)| rates.get(p) > tol)
            .map(|(p, pair)| EdgeRecord {
                src: pair.src,
                dst: pair.dst,
                rate: rates.get(p),
            })
            .collect()
    };

    let anomalies = detection
        .per_edge
        .iter()
        .filter(|e| e.label != crate::detect::EdgeLabel::Normal)
        .cloned()
        .collect();
    let injected = gt
        .topology
        .pairs()
        .iter()
        .zip(&gt.labels)
        .filter(|(_, &l)| l != DiversionLabel::None)
        .map(|(&pair, &l)| (pair, l))
        .collect();

    Ok(InstanceDiff {
        provenance: provenance(config),
        trial,
        baseline_edges: edges(&gt.baseline, 0.0),
        estimated_edges: edges(&report.lambda_hat, config.detect.edge_tol),
        anomalies,
        injected,
        detection,
    })
}

// ---------------------------------------------------------------------------
// Output files and the study driver
// ---------------------------------------------------------------------------

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(fs::File::create(path)?))
}

/// Summary returned to the CLI: one line for stdout plus the files written.
#[derive(Debug)]
pub struct StudyOutput {
    pub summary_line: String,
    pub files: Vec<PathBuf>,
}

/// Runs the configured study and writes its tables under `out_dir`.
pub fn run_study(config: &RunConfig, out_dir: &Path) -> Result<StudyOutput> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    let summary_line = match config.study.kind {
        Study::MseVsEdges => {
            let study = run_mse_vs_edges(config)?;
            let csv_path = out_dir.join("mse_vs_edges.csv");
            let mut w = csv_writer(&csv_path)?;
            w.write_record(["fraction", "estimator", "mean_mse", "std_err", "trials", "failures"])?;
            for c in &study.cells {
                w.write_record(&[
                    c.fraction.to_string(),
                    c.estimator.clone(),
                    c.mean_mse.to_string(),
                    c.std_err.to_string(),
                    c.trials.to_string(),
                    c.failures.to_string(),
                ])?;
            }
            w.flush()?;
            let json_path = out_dir.join("mse_vs_edges.json");
            write_json(&json_path, &study)?;
            files.extend([csv_path, json_path]);

            let at_zero: Vec<String> = study
                .cells
                .iter()
                .filter(|c| c.fraction == 0.0)
                .map(|c| format!("{}={:.4}", c.estimator, c.mean_mse))
                .collect();
            format!("mse_vs_edges: mean MSE at f=0: {}", at_zero.join(" "))
        }
        Study::EmIterations => {
            let study = run_em_iterations(config)?;
            let csv_path = out_dir.join("em_iterations.csv");
            let mut w = csv_writer(&csv_path)?;
            w.write_record([
                "ticks",
                "fraction",
                "init",
                "mean_iterations",
                "std_err",
                "censored",
                "runs",
            ])?;
            for c in &study.cells {
                w.write_record(&[
                    c.ticks.to_string(),
                    c.fraction.to_string(),
                    c.init.clone(),
                    c.mean_iterations.to_string(),
                    c.std_err.to_string(),
                    c.censored.to_string(),
                    c.runs.to_string(),
                ])?;
            }
            w.flush()?;
            let json_path = out_dir.join("em_iterations.json");
            write_json(&json_path, &study)?;
            files.extend([csv_path, json_path]);

            let pairs: Vec<String> = study
                .cells
                .iter()
                .map(|c| format!("T={},f={},{}:{:.1}", c.ticks, c.fraction, c.init, c.mean_iterations))
                .collect();
            format!("em_iterations: {}", pairs.join(" "))
        }
        Study::RocOverT => {
            let study = run_roc_over_t(config)?;
            let mut aucs = Vec::new();
            for per in &study.per_ticks {
                let csv_path = out_dir.join(format!("roc_T{}.csv", per.ticks));
                let mut w = csv_writer(&csv_path)?;
                w.write_record(["fpr", "tpr"])?;
                for &(fpr, tpr) in &per.curve.points {
                    w.write_record(&[fpr.to_string(), tpr.to_string()])?;
                }
                w.flush()?;
                files.push(csv_path);
                aucs.push(format!("AUC[T={}]={:.4}", per.ticks, per.auc));
            }
            let auc_path = out_dir.join("auc.csv");
            let mut w = csv_writer(&auc_path)?;
            w.write_record(["ticks", "auc", "trials", "failures"])?;
            for per in &study.per_ticks {
                w.write_record(&[
                    per.ticks.to_string(),
                    per.auc.to_string(),
                    per.statistics.len().to_string(),
                    per.failures.to_string(),
                ])?;
            }
            w.flush()?;
            let json_path = out_dir.join("roc_over_t.json");
            write_json(&json_path, &study)?;
            files.extend([auc_path, json_path]);
            format!("roc_over_t: {}", aucs.join(" "))
        }
        Study::SingleInstance => {
            let diff = run_single_instance(config)?;
            let json_path = out_dir.join("instance_diff.json");
            write_json(&json_path, &diff)?;
            let csv_path = out_dir.join("instance_edges.csv");
            let mut w = csv_writer(&csv_path)?;
            w.write_record(["src", "dst", "baseline", "estimate", "label"])?;
            for e in &diff.detection.per_edge {
                if e.baseline > 0.0
                    || e.estimate > 0.0
                    || e.label != crate::detect::EdgeLabel::Normal
                {
                    w.write_record(&[
                        e.pair.src.to_string(),
                        e.pair.dst.to_string(),
                        e.baseline.to_string(),
                        e.estimate.to_string(),
                        serde_json::to_value(e.label)?.as_str().unwrap().to_string(),
                    ])?;
                }
            }
            w.flush()?;
            files.extend([json_path, csv_path]);
            format!(
                "single_instance: statistic={:.4} threshold={:.4} decision={} anomalies={}",
                diff.detection.statistic,
                diff.detection.threshold,
                diff.detection.decision,
                diff.anomalies.len()
            )
        }
    };
    Ok(StudyOutput {
        summary_line,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive() {
        use rand::Rng;
        let mut rng = crate::rng::substream(41, crate::rng::Component::Init);
        for _ in 0..20 {
            let n = rng.gen_range(0..50);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let naive: f64 = v.iter().sum();
            assert!((pairwise_sum(&v) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn observed_subset_is_fresh_per_trial_and_deterministic() {
        let a = observed_subset(90, 0.25, 7, 0, 0);
        let b = observed_subset(90, 0.25, 7, 0, 0);
        let c = observed_subset(90, 0.25, 7, 1, 0);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 23); // ceil(0.25 * 90)
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::default();
        spec.trials = 0;
        assert!(spec.validate().is_err());
        let mut spec = ExperimentSpec::default();
        spec.fractions = vec![0.5, 0.25];
        assert!(spec.validate().is_err());
    }
}
