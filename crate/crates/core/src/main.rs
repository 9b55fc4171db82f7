//! `nettomo` command line: simulate, estimate, detect, study.
//!
//! All subcommands read the same strict JSON config (every key optional,
//! unknown keys rejected). Exit codes are a stable contract: 0 success,
//! 1 I/O, 2 configuration or contract, 3 computation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nettomo::config::{RunConfig, SimulationArtifact};
use nettomo::detect::{calibrate_threshold, detect, null_statistics};
use nettomo::estimators::{run_estimator, EstimatorTag};
use nettomo::experiments::run_study;
use nettomo::net::{apply_operator, build_operator};
use nettomo::sim::{gen_ground_truth, sample_traffic};
use nettomo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nettomo",
    version,
    about = "Simulation, rate estimation, and anomaly detection for partially observed Poisson traffic networks"
)]
struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the root seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap; defaults to the available cores. Outputs do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Restore the reference scale (10 nodes, T = 150, 200 trials).
    #[arg(long, global = true)]
    paper_scale: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a network, its traffic, and the monitor observations.
    Simulate {
        /// Output JSON path.
        #[arg(long, default_value = "simulation.json")]
        out: PathBuf,
        /// Trial index within the seed's stream space.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Strip ground truth and raw traffic from the output, leaving only
        /// what monitors see.
        #[arg(long)]
        observables_only: bool,
    },
    /// Reconstruct rates from a simulation file.
    Estimate {
        /// Simulation JSON produced by `simulate`.
        #[arg(long)]
        input: PathBuf,
        /// One of: oracle, poisson_mle, hipois, mre, mre_hipois.
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value = "estimate.json")]
        out: PathBuf,
    },
    /// Calibrate a threshold under the null and test an estimate against the
    /// baseline.
    Detect {
        /// Simulation JSON (supplies topology, baseline, scheme).
        #[arg(long)]
        input: PathBuf,
        /// Estimate JSON produced by `estimate`.
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value = "detection.json")]
        out: PathBuf,
    },
    /// Run one of the simulation studies end to end.
    Study {
        /// mse_vs_edges, em_iterations, roc_over_t, or single_instance;
        /// defaults to the config's study.kind.
        #[arg(long)]
        study: Option<String>,
        /// Output directory for tables and summaries.
        #[arg(long, default_value = "study_out")]
        out: PathBuf,
    },
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

#[derive(Serialize)]
struct EstimateDocument {
    seed: u64,
    estimator: String,
    report: nettomo::estimators::EstimateReport,
}

#[derive(Serialize)]
struct DetectionDocument {
    seed: u64,
    estimator: String,
    target_fpr: f64,
    null_draws: usize,
    result: nettomo::detect::DetectionResult,
}

fn cmd_simulate(config: &RunConfig, out: &Path, trial: u64, observables_only: bool) -> Result<()> {
    let gt = gen_ground_truth(&config.sim, trial)?;
    let traffic = sample_traffic(&config.sim, &gt, trial)?;
    let scheme = config.scheme.build(&gt.topology)?;
    let op = build_operator(&gt.topology, &scheme)?;
    let observations = apply_operator(&op, &traffic)?;
    let artifact = SimulationArtifact {
        config: config.sim.clone(),
        trial,
        topology: gt.topology.clone(),
        baseline: gt.baseline.clone(),
        scheme,
        observations,
        ground_truth: (!observables_only).then_some(gt),
        traffic: (!observables_only).then_some(traffic),
    };
    write_json(out, &artifact)?;
    println!(
        "simulate: seed={} trial={} pairs={} ticks={} rows={} -> {}",
        config.sim.seed,
        trial,
        artifact.topology.n_pairs(),
        artifact.observations.ticks(),
        artifact.observations.rows().len(),
        out.display()
    );
    Ok(())
}

fn cmd_estimate(config: &RunConfig, input: &Path, estimator: &str, out: &Path) -> Result<()> {
    let artifact = SimulationArtifact::load(input)?;
    let tag: EstimatorTag = estimator.parse()?;
    let op = build_operator(&artifact.topology, &artifact.scheme)?;
    let mut settings = config.settings_for(tag);
    settings.seed = nettomo::rng::derive_seed(config.sim.seed, &[artifact.trial]);
    let report = run_estimator(
        tag,
        &artifact.observations,
        &op,
        Some(&artifact.baseline),
        artifact.traffic.as_ref(),
        &settings,
    )?;
    println!(
        "estimate: {} iterations={} converged={} -> {}",
        tag,
        report.iterations,
        report.converged,
        out.display()
    );
    write_json(
        out,
        &EstimateDocument {
            seed: config.sim.seed,
            estimator: tag.name().to_string(),
            report,
        },
    )?;
    Ok(())
}

fn cmd_detect(config: &RunConfig, input: &Path, estimate: &Path, out: &Path) -> Result<()> {
    let artifact = SimulationArtifact::load(input)?;
    let text = std::fs::read_to_string(estimate)?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let estimator = doc
        .get("estimator")
        .and_then(|v| v.as_str())
        .unwrap_or("mre_hipois")
        .to_string();
    let lambda_values: Vec<f64> = serde_json::from_value(
        doc.pointer("/report/lambda_hat")
            .cloned()
            .ok_or_else(|| Error::Contract(format!("{}: missing report.lambda_hat", estimate.display())))?,
    )?;
    let lambda_hat = nettomo::net::RateMatrix::from_values(lambda_values)?;

    let tag: EstimatorTag = estimator.parse()?;
    let gt = nettomo::sim::GroundTruth {
        topology: artifact.topology.clone(),
        baseline: artifact.baseline.clone(),
        truth: artifact.baseline.clone(),
        labels: vec![nettomo::sim::DiversionLabel::None; artifact.topology.n_pairs()],
    };
    let settings = config.settings_for(tag);
    let nulls = null_statistics(
        &gt,
        &artifact.scheme,
        artifact.observations.ticks(),
        tag,
        &settings,
        &config.detect,
        nettomo::rng::derive_seed(config.sim.seed, &[0xD37EC7]),
    )?;
    let threshold = calibrate_threshold(&nulls, config.detect.target_fpr)?;
    let result = detect(
        artifact.topology.pairs(),
        &lambda_hat,
        &artifact.baseline,
        threshold,
        config.detect.edge_tol,
    )?;
    println!(
        "detect: statistic={:.4} threshold={:.4} decision={} anomalies={}",
        result.statistic,
        result.threshold,
        result.decision,
        result
            .per_edge
            .iter()
            .filter(|e| e.label != nettomo::detect::EdgeLabel::Normal)
            .count()
    );
    write_json(
        out,
        &DetectionDocument {
            seed: config.sim.seed,
            estimator,
            target_fpr: config.detect.target_fpr,
            null_draws: config.detect.null_draws,
            result,
        },
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if cli.paper_scale {
        config.apply_paper_scale();
    }
    if let Some(seed) = cli.seed {
        config.apply_seed(seed);
    }
    config.validate()?;

    match &cli.command {
        Command::Simulate {
            out,
            trial,
            observables_only,
        } => cmd_simulate(&config, out, *trial, *observables_only),
        Command::Estimate {
            input,
            estimator,
            out,
        } => cmd_estimate(&config, input, estimator, out),
        Command::Detect {
            input,
            estimate,
            out,
        } => cmd_detect(&config, input, estimate, out),
        Command::Study { study, out } => {
            if let Some(name) = study {
                config.study.kind = name.parse()?;
            }
            let out_dir = config
                .study
                .out_dir
                .clone()
                .map(PathBuf::from)
                .filter(|_| out == Path::new("study_out"))
                .unwrap_or_else(|| out.clone());
            let output = run_study(&config, &out_dir)?;
            println!("{}", output.summary_line);
            Ok(())
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Csv(_) => 1,
        Error::Config(_) | Error::Contract(_) | Error::Json(_) => 2,
        Error::InfeasibleObservation(_)
        | Error::EnumerationBudget { .. }
        | Error::Estimation(_)
        | Error::Calibration(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
