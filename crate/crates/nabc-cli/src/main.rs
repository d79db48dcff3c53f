//! `nabc` — command-line front end for angle-based dependence matrix
//! inference. Every subcommand is a pure function of (inputs, seed,
//! version); the seed is echoed in every report so published numbers are
//! replayable.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nabc_core::dgm::{Dgm, DgmSpec};
use nabc_core::entropy::{matrix_entropy, norm_triple};
use nabc_core::identity::{
    angle_quantile, cell_laws, k_for_cell, sample_identity_matrices, simultaneous_alphas, KMode,
    SampleSizeContext, Sides,
};
use nabc_core::kernel::{
    calibrate, cdf_matrix_of, matrix_inference, matrix_quantile, read_artifact,
    sample_from_kernels, two_sample_test, write_artifact, CdfMatrix, KernelSpec,
};
use nabc_core::matrix::angles_to_corr;
use nabc_core::measures::{pairwise_matrix, MeasureSpec};
use nabc_core::scenario::{
    plan_scenario, scenario_inference, scenario_sample, scenario_two_sample, ScenarioSpec,
};
use nabc_core::{DependenceMatrix, Error, MeasureKind, ReturnsPanel};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "nabc", version, about = "Finite-sample inference for dependence matrices")]
struct Cli {
    /// Worker thread cap (falls back to the NABC_THREADS environment variable)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the primary output here instead of stdout
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct MeasureArgs {
    /// Dependence measure (pearson, spearman, kendall, kendall_b, tail_upper,
    /// tail_lower, szekely, lancaster, lancaster_linear, chatterjee,
    /// chatterjee_sym, chatterjee_improved, zhang, tail_kendall)
    #[arg(long, default_value = "pearson")]
    measure: String,
    /// Quantile level for the tail measures
    #[arg(long)]
    quantile_level: Option<f64>,
}

impl MeasureArgs {
    fn spec(&self) -> Result<MeasureSpec, Error> {
        let kind = MeasureKind::from_str(&self.measure)?;
        let spec = match self.quantile_level {
            Some(q) => MeasureSpec::with_quantile(kind, q),
            None => MeasureSpec::new(kind),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a dependence matrix from a returns panel (CSV with a header row)
    Estimate {
        /// Panel CSV path
        panel: PathBuf,
        #[command(flatten)]
        measure: MeasureArgs,
        /// Seed for estimator-internal tie breaking
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic returns panel from a generator description
    Generate {
        /// Generator JSON path
        model: PathBuf,
        /// Number of observations
        #[arg(long, short)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fully analytic laws, p-values and intervals under the identity baseline
    Identity {
        /// Number of variables
        #[arg(long, short)]
        p: usize,
        /// Sample size behind an observed matrix
        #[arg(long, short)]
        n: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Optional observed matrix CSV to test against the identity
        #[arg(long)]
        observed: Option<PathBuf>,
        #[command(flatten)]
        measure: MeasureArgs,
        /// Also draw this many matrices from the analytic law
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate, estimate, and fit per-cell angle distributions; writes a binary artifact
    Calibrate {
        /// Generator JSON path
        model: PathBuf,
        #[command(flatten)]
        measure: MeasureArgs,
        /// Observations per replicate
        #[arg(long, short)]
        n: usize,
        /// Number of replicates
        #[arg(long, short = 'N')]
        reps: usize,
        /// Artifact output path
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw whole dependence matrices from a calibrated artifact
    Sample {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// P-values and confidence intervals for an observed matrix
    Infer {
        #[arg(long)]
        artifact: PathBuf,
        /// Observed matrix CSV
        #[arg(long)]
        observed: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Quantile matrix from per-cell CDF levels, or CDF levels of a matrix
    Quantile {
        #[arg(long)]
        artifact: PathBuf,
        /// One CDF level applied to every cell
        #[arg(long, conflicts_with_all = ["levels", "observed"])]
        uniform: Option<f64>,
        /// CSV of per-cell CDF levels (square, lower triangle read)
        #[arg(long, conflicts_with = "observed")]
        levels: Option<PathBuf>,
        /// Reverse lookup: matrix CSV whose per-cell CDF levels are reported
        #[arg(long)]
        observed: Option<PathBuf>,
    },
    /// Test whether two calibrated samples share one population matrix
    TwoSample {
        #[arg(long)]
        artifact_a: PathBuf,
        #[arg(long)]
        artifact_b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Scenario-restricted analysis: freeze every cell outside the targets
    Scenario {
        #[arg(long)]
        artifact: PathBuf,
        /// Scenario JSON: {"label", "dim", "targets": [[row, col], ...]}
        #[arg(long)]
        scenario: PathBuf,
        /// Observed matrix CSV for restricted inference
        #[arg(long)]
        observed: Option<PathBuf>,
        /// Draw this many scenario-restricted matrices
        #[arg(long)]
        sample: Option<usize>,
        /// Second artifact for a restricted two-sample comparison
        #[arg(long)]
        artifact_b: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Eigenvalue entropy and norms of a dependence matrix
    Entropy {
        /// Matrix CSV
        matrix: PathBuf,
        #[command(flatten)]
        measure: MeasureArgs,
        /// Optional reference matrix CSV for distance norms
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("NABC_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global() {
            eprintln!("{}", json!({"error": {"kind": "config", "message": e.to_string()}}));
            std::process::exit(2);
        }
    }
    match run(cli.command, cli.output.as_deref()) {
        Ok(()) => {}
        Err(e) => {
            let code = if e.is_domain() { 1 } else { 2 };
            eprintln!(
                "{}",
                json!({"error": {
                    "kind": if code == 1 { "domain" } else { "config" },
                    "message": e.to_string(),
                }})
            );
            std::process::exit(code);
        }
    }
}

/// Explicit seed, or one drawn from the OS entropy source; either way it is
/// echoed in the report, so replayability never depends on how it was
/// produced.
fn resolve_seed(seed: Option<u64>) -> u64 {
    use std::hash::{BuildHasher, Hasher};
    seed.unwrap_or_else(|| {
        std::collections::hash_map::RandomState::new().build_hasher().finish()
    })
}

fn read_to_string(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(Error::from)
}

fn read_matrix(path: &Path, measure: MeasureKind) -> Result<DependenceMatrix, Error> {
    DependenceMatrix::from_csv_str(&read_to_string(path)?, measure)
}

fn read_model(path: &Path) -> Result<Box<dyn Dgm>, Error> {
    let spec: DgmSpec = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| Error::Parse { reason: format!("{}: {e}", path.display()) })?;
    spec.build()
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Error> {
    match output {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_json(output: Option<&Path>, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Parse { reason: e.to_string() })?;
    emit(output, &text)
}

fn provenance(seed: Option<u64>, extra: serde_json::Value) -> serde_json::Value {
    let mut v = json!({"version": VERSION});
    if let Some(s) = seed {
        v["seed"] = json!(s);
    }
    if let serde_json::Value::Object(map) = extra {
        for (k, val) in map {
            v[k] = val;
        }
    }
    v
}

fn run(command: Command, output: Option<&Path>) -> Result<(), Error> {
    match command {
        Command::Estimate { panel, measure, seed } => {
            let spec = measure.spec()?;
            let panel_data = ReturnsPanel::from_csv_str(&read_to_string(&panel)?)?;
            let seed = resolve_seed(seed);
            let matrix = pairwise_matrix_seeded(&panel_data, &spec, seed)?;
            emit_json(
                output,
                &json!({
                    "matrix": matrix.to_json(),
                    "positive_definite": matrix.is_positive_definite(),
                    "provenance": provenance(Some(seed), json!({
                        "subcommand": "estimate",
                        "panel": panel.display().to_string(),
                        "n": panel_data.n(),
                        "measure": spec,
                    })),
                }),
            )
        }
        Command::Generate { model, n, seed } => {
            let dgm = read_model(&model)?;
            let seed = resolve_seed(seed);
            let panel = dgm.generate(n, seed)?;
            emit(output, &panel.to_csv_string())?;
            // The provenance record goes to stderr so the CSV stream stays
            // clean when piped.
            eprintln!(
                "{}",
                provenance(Some(seed), json!({
                    "subcommand": "generate",
                    "model": dgm.describe(),
                    "n": n,
                }))
            );
            Ok(())
        }
        Command::Identity { p, n, alpha, observed, measure, sample, seed } => {
            let spec = measure.spec()?;
            run_identity(output, p, n, alpha, observed.as_deref(), &spec, sample, seed)
        }
        Command::Calibrate { model, measure, n, reps, artifact, seed } => {
            let spec = measure.spec()?;
            let dgm = read_model(&model)?;
            let seed = resolve_seed(seed);
            let set = calibrate(dgm.as_ref(), &spec, n, reps, KernelSpec::default(), seed)?;
            write_artifact(&set, &artifact)?;
            emit_json(
                output,
                &json!({
                    "artifact": artifact.display().to_string(),
                    "mean_matrix": set.mean_matrix().to_json(),
                    "pvalue_floor": set.pvalue_floor(),
                    "provenance": provenance(Some(seed), json!({
                        "subcommand": "calibrate",
                        "model": dgm.describe(),
                        "calibration": set.provenance(),
                    })),
                }),
            )
        }
        Command::Sample { artifact, count, seed } => {
            let set = read_artifact(&artifact)?;
            let seed = resolve_seed(seed);
            let draws = sample_from_kernels(&set, count, seed);
            let matrices: Vec<serde_json::Value> = draws
                .iter()
                .map(|theta| json!(angles_to_corr(theta).lower_triangle()))
                .collect();
            emit_json(
                output,
                &json!({
                    "dim": set.dim(),
                    "measure": set.measure().as_str(),
                    "lower_triangles": matrices,
                    "provenance": provenance(Some(seed), json!({
                        "subcommand": "sample",
                        "calibration": set.provenance(),
                    })),
                }),
            )
        }
        Command::Infer { artifact, observed, alpha } => {
            let set = read_artifact(&artifact)?;
            let matrix = read_matrix(&observed, set.measure())?;
            let report = matrix_inference(&set, &matrix, alpha)?;
            emit(output, &report.to_json_string()?)
        }
        Command::Quantile { artifact, uniform, levels, observed } => {
            let set = read_artifact(&artifact)?;
            if let Some(path) = observed {
                let matrix = read_matrix(&path, set.measure())?;
                let cdfs = cdf_matrix_of(&set, &matrix)?;
                return emit_json(
                    output,
                    &json!({
                        "dim": set.dim(),
                        "cdf_levels": cdfs.levels(),
                        "provenance": provenance(None, json!({
                            "subcommand": "quantile",
                            "mode": "reverse_lookup",
                            "calibration": set.provenance(),
                        })),
                    }),
                );
            }
            let cdfs = match (uniform, levels) {
                (Some(u), None) => CdfMatrix::uniform(set.dim(), u)?,
                (None, Some(path)) => {
                    let m = read_matrix(&path, set.measure())?;
                    CdfMatrix::new(set.dim(), m.lower_triangle())?
                }
                _ => {
                    return Err(Error::InvalidSpec {
                        reason: "quantile needs exactly one of --uniform, --levels, --observed"
                            .into(),
                    })
                }
            };
            let matrix = matrix_quantile(&set, &cdfs)?;
            emit_json(
                output,
                &json!({
                    "matrix": matrix.to_json(),
                    "cdf_levels": cdfs.levels(),
                    "provenance": provenance(None, json!({
                        "subcommand": "quantile",
                        "calibration": set.provenance(),
                    })),
                }),
            )
        }
        Command::TwoSample { artifact_a, artifact_b, alpha, seed } => {
            let a = read_artifact(&artifact_a)?;
            let b = read_artifact(&artifact_b)?;
            let seed = resolve_seed(seed);
            let report = two_sample_test(&a, &b, alpha, seed)?;
            emit(output, &report.to_json_string()?)
        }
        Command::Scenario { artifact, scenario, observed, sample, artifact_b, alpha, seed } => {
            let set = read_artifact(&artifact)?;
            let spec = ScenarioSpec::from_json_str(&read_to_string(&scenario)?)?;
            let plan = plan_scenario(&spec)?;
            if let Some(path) = observed {
                let matrix = read_matrix(&path, set.measure())?;
                let report = scenario_inference(&set, &plan, &matrix, alpha)?;
                return emit(output, &report.to_json_string()?);
            }
            if let Some(path) = artifact_b {
                let b = read_artifact(&path)?;
                let seed = resolve_seed(seed);
                let report = scenario_two_sample(&set, &b, &plan, alpha, seed)?;
                return emit(output, &report.to_json_string()?);
            }
            let count = sample.unwrap_or(100);
            let seed = resolve_seed(seed);
            let draws = scenario_sample(&set, &plan, count, seed)?;
            emit_json(
                output,
                &json!({
                    "dim": set.dim(),
                    "measure": set.measure().as_str(),
                    "plan": {
                        "label": plan.label,
                        "sigma": plan.sigma,
                        "targets": plan.targets,
                        "forced_extras": plan.forced_extras,
                    },
                    "lower_triangles": draws
                        .iter()
                        .map(|m| json!(m.lower_triangle()))
                        .collect::<Vec<_>>(),
                    "provenance": provenance(Some(seed), json!({
                        "subcommand": "scenario",
                        "calibration": set.provenance(),
                    })),
                }),
            )
        }
        Command::Entropy { matrix, measure, reference } => {
            let spec = measure.spec()?;
            let m = read_matrix(&matrix, spec.kind)?;
            let mut body = json!({
                "dim": m.dim(),
                "entropy": matrix_entropy(&m)?,
                "eigenvalues": m.eigenvalues()?,
                "positive_definite": m.is_positive_definite(),
                "provenance": provenance(None, json!({"subcommand": "entropy"})),
            });
            if let Some(path) = reference {
                let r = read_matrix(&path, spec.kind)?;
                body["norms_vs_reference"] = serde_json::to_value(norm_triple(&m, &r)?)
                    .map_err(|e| Error::Parse { reason: e.to_string() })?;
            }
            emit_json(output, &body)
        }
    }
}

/// Pairwise estimation with an explicit tie-break seed.
fn pairwise_matrix_seeded(
    panel: &ReturnsPanel,
    spec: &MeasureSpec,
    _seed: u64,
) -> Result<DependenceMatrix, Error> {
    // The library derives per-cell tie seeds internally; the CLI seed is
    // echoed for provenance and reserved for estimators that consume it.
    pairwise_matrix(panel, spec)
}

#[allow(clippy::too_many_arguments)]
fn run_identity(
    output: Option<&Path>,
    p: usize,
    n: usize,
    alpha: f64,
    observed: Option<&Path>,
    spec: &MeasureSpec,
    sample: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Error> {
    use nabc_core::cell::{cell_count, lower_triangle_cells};
    use nabc_core::matrix::corr_to_angles;

    let ctx = SampleSizeContext::new(n, p)?;
    let laws = cell_laws(ctx, KMode::FiniteSample)?;
    let q = cell_count(p);
    let (alpha_low, alpha_high) = simultaneous_alphas(alpha, q)?;

    let bound = |level: f64| -> Result<Vec<f64>, Error> {
        lower_triangle_cells(p)
            .iter()
            .zip(&laws)
            .map(|(_, &law)| Ok(angle_quantile(level, law)?.cos()))
            .collect()
    };
    // cos is decreasing: the high angle quantile is the low correlation.
    let matrix_ci_high = bound(alpha_low)?;
    let matrix_ci_low = bound(alpha_high)?;
    let cell_ci_high = bound(alpha / 2.0)?;
    let cell_ci_low = bound(1.0 - alpha / 2.0)?;

    let mut body = json!({
        "p": p,
        "n": n,
        "alpha": alpha,
        "simultaneous_alpha_low": alpha_low,
        "cells": lower_triangle_cells(p)
            .iter()
            .map(|c| json!({
                "row": c.row,
                "col": c.col,
                "k": k_for_cell(ctx, *c, KMode::FiniteSample).unwrap(),
            }))
            .collect::<Vec<_>>(),
        "matrix_ci_low": matrix_ci_low,
        "matrix_ci_high": matrix_ci_high,
        "cell_ci_low": cell_ci_low,
        "cell_ci_high": cell_ci_high,
        "provenance": provenance(None, json!({"subcommand": "identity"})),
    });

    if let Some(path) = observed {
        let matrix = read_matrix(path, spec.kind)?;
        let theta = corr_to_angles(&matrix)?;
        let mut pvalues = Vec::with_capacity(q);
        for (idx, &law) in laws.iter().enumerate() {
            pvalues.push(nabc_core::identity::cell_pvalue(
                theta.angles()[idx],
                law,
                Sides::Two,
            )?);
        }
        body["observed_cell_pvalues"] = json!(pvalues);
        body["observed_matrix_pvalue"] = json!(nabc_core::identity::matrix_pvalue(&pvalues)?);
    }

    if let Some(count) = sample {
        let seed = resolve_seed(seed);
        let draws = sample_identity_matrices(p, n, count, seed)?;
        body["samples"] = json!(draws.iter().map(|m| m.lower_triangle()).collect::<Vec<_>>());
        body["provenance"]["seed"] = json!(seed);
    }

    emit_json(output, &body)
}
