//! `cdpa` command-line front end.
//!
//! stdout carries one JSON document per invocation; progress and warnings go
//! to stderr. Exit codes: 0 success, 2 input error, 3 numerical failure.

mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cdpa::align::{build_match_problem, dspfp_match, exhaustive_match, DspfpConfig, EXHAUSTIVE_MAX};
use cdpa::cdpa::{bootstrap_ci, estimate_cdpa, select_ranks, BootstrapConfig, CdpaConfig, PermutationSource, SignMode};
use cdpa::denoise::{center_rows, ObservedMatrix};
use cdpa::io::{read_matrix, write_decomposition};
use cdpa::linalg::pad_rows;
use cdpa::simulate::{oracle_explained_variance, run_replications, SimulationConfig, StudyOptions};
use cdpa::subspace::orthonormal_basis;
use cdpa::{CdpaError, MixingChannel, PermutationPlan, RankProfile};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use manifest::{RunManifest, SignRecord};

#[derive(Parser)]
#[command(name = "cdpa", version, about = "Common and distinctive pattern analysis of paired data matrices")]
struct Cli {
    /// Worker threads for simulation cells and bootstrap replicates.
    #[arg(long, env = "CDPA_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select r1, r2 and r12 from two data matrices.
    Ranks(RanksArgs),
    /// Run the full decomposition and write all pattern matrices.
    Decompose(DecomposeArgs),
    /// Replication studies over a grid of simulation settings.
    Simulate(SimulateArgs),
    /// Population explained variance of the simulation construction.
    Oracle(OracleArgs),
    /// Align the rows of two coefficient matrices.
    Match(MatchArgs),
    /// Percentile interval for the explained variance.
    Bootstrap(BootstrapArgs),
}

#[derive(Args)]
struct Inputs {
    /// Dataset 1, variables in rows (CSV, TSV or CDPM binary).
    y1: PathBuf,
    /// Dataset 2, same samples in the same column order.
    y2: PathBuf,
    /// Skip row centering.
    #[arg(long)]
    no_center: bool,
}

#[derive(Args)]
struct RanksArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, default_value_t = 0.05)]
    screen_alpha: f64,
}

#[derive(Args)]
struct RankChoice {
    /// Fixed ranks as r1,r2,r12.
    #[arg(long, value_parser = parse_ranks, conflicts_with = "auto_ranks")]
    ranks: Option<RankProfile>,
    /// Select ranks from the data (the default when --ranks is absent).
    #[arg(long)]
    auto_ranks: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SignArg {
    Auto,
    Plus,
    Minus,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[command(flatten)]
    ranks: RankChoice,
    /// identity, dspfp, exhaustive, or a file holding a 0-based permutation.
    #[arg(long, default_value = "identity")]
    perm: String,
    #[arg(long, value_enum, default_value = "auto")]
    sign: SignArg,
    /// Bootstrap replicates for the explained-variance interval (0 disables).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    screen_alpha: f64,
    #[arg(long, default_value = "cdpa-out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 1)]
    setup: u8,
    #[arg(long, value_delimiter = ',', default_value = "15")]
    theta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "300")]
    p1: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    noise: Vec<f64>,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also run rank selection in every replication.
    #[arg(long)]
    select_ranks: bool,
    #[arg(long, default_value = "cdpa-sim")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_delimiter = ',', default_value = "0,15,30,45,60,75")]
    theta: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatchArg {
    Dspfp,
    Exhaustive,
}

#[derive(Args)]
struct MatchArgs {
    /// Coefficient matrix of dataset 1 (p1 × r).
    b1: PathBuf,
    /// Coefficient matrix of dataset 2 (p2 × r), zero padded when p2 < p1.
    b2: PathBuf,
    #[arg(long, value_enum, default_value = "dspfp")]
    method: MatchArg,
    /// Also write the permutation as a JSON array to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BootstrapArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_parser = parse_ranks)]
    ranks: RankProfile,
    /// identity or a permutation file.
    #[arg(long, default_value = "identity")]
    perm: String,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_ranks(s: &str) -> Result<RankProfile, String> {
    let parts: Vec<usize> =
        s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad rank {t:?}: {e}"))).collect::<Result<_, _>>()?;
    match parts[..] {
        [r1, r2, r12] => RankProfile::new(r1, r2, r12).map_err(|e| e.to_string()),
        _ => Err(format!("expected r1,r2,r12, got {s:?}")),
    }
}

/// A failure tagged with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn classify(error: anyhow::Error) -> Failure {
    let code = match error.downcast_ref::<CdpaError>() {
        Some(e) if !e.is_input_error() => 3,
        _ => 2,
    };
    Failure { code, error }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("warning: could not configure {threads} threads: {e}");
        }
    }
    let result = match cli.command {
        Command::Ranks(a) => cmd_ranks(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Match(a) => cmd_match(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
    };
    match result {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("JSON output"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let f = classify(e);
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<ObservedMatrix<f64>> {
    let m = read_matrix::<f64>(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ObservedMatrix::new(m)?)
}

fn load_pair(inputs: &Inputs) -> Result<(ObservedMatrix<f64>, ObservedMatrix<f64>)> {
    let y1 = load(&inputs.y1)?;
    let y2 = load(&inputs.y2)?;
    if y1.nsamples() != y2.nsamples() {
        return Err(CdpaError::BadDimensions(format!(
            "{} has {} samples but {} has {}",
            inputs.y1.display(),
            y1.nsamples(),
            inputs.y2.display(),
            y2.nsamples()
        ))
        .into());
    }
    Ok((y1, y2))
}

/// Reads a 0-based permutation: a JSON array or whitespace/comma separated integers.
fn read_permutation(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading permutation file {}", path.display()))?;
    let trimmed = text.trim();
    if trimmed.starts_with('[') {
        return serde_json::from_str(trimmed)
            .map_err(|e| CdpaError::Parse { line: e.line(), message: e.to_string() })
            .with_context(|| format!("parsing {}", path.display()));
    }
    let mut perm = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for token in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v = token.parse::<usize>().map_err(|e| CdpaError::Parse { line: i + 1, message: format!("{token:?}: {e}") })?;
            perm.push(v);
        }
    }
    Ok(perm)
}

fn permutation_source(spec: &str) -> Result<PermutationSource> {
    Ok(match spec {
        "identity" => PermutationSource::Identity,
        "dspfp" => PermutationSource::Dspfp(DspfpConfig::default()),
        "exhaustive" => PermutationSource::Exhaustive,
        file => PermutationSource::Provided(read_permutation(Path::new(file))?),
    })
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_ranks(a: RanksArgs) -> Result<serde_json::Value> {
    let (y1, y2) = load_pair(&a.inputs)?;
    let (y1, y2) = if a.inputs.no_center { (y1, y2) } else { (center_rows(&y1), center_rows(&y2)) };
    let (ranks, screened) = select_ranks(&y1, &y2, a.screen_alpha)?;
    Ok(json!({ "r1": ranks.r1, "r2": ranks.r2, "r12": ranks.r12, "screen": screened }))
}

fn cmd_decompose(a: DecomposeArgs) -> Result<serde_json::Value> {
    let mut timings = BTreeMap::new();
    let start = Instant::now();
    let (y1, y2) = load_pair(&a.inputs)?;
    timings.insert("load_s".to_string(), start.elapsed().as_secs_f64());

    let config = CdpaConfig {
        ranks: a.ranks.ranks,
        center: !a.inputs.no_center,
        permutation: permutation_source(&a.perm)?,
        sign: match a.sign {
            SignArg::Auto => SignMode::Auto,
            SignArg::Plus => SignMode::Plus,
            SignArg::Minus => SignMode::Minus,
        },
        screen_alpha: a.screen_alpha,
        bootstrap: (a.bootstrap > 0).then_some(BootstrapConfig { replicates: a.bootstrap, level: a.level }),
        seed: a.seed,
        ..CdpaConfig::default()
    };
    let fit_start = Instant::now();
    let fit = estimate_cdpa(&y1, &y2, &config)?;
    timings.insert("estimate_s".to_string(), fit_start.elapsed().as_secs_f64());
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }

    let mut artifacts: Vec<String> =
        write_decomposition(&a.out, &fit.decomposition, &fit.sources)?.iter().map(|p| path_string(p)).collect();
    let perm_path = a.out.join("permutation.json");
    std::fs::write(&perm_path, serde_json::to_string(&fit.plan.perm)?)?;
    artifacts.push(path_string(&perm_path));
    let manifest_path = a.out.join("manifest.json");
    artifacts.push(path_string(&manifest_path));

    let manifest = RunManifest {
        command: "decompose".into(),
        inputs: vec![path_string(&a.inputs.y1), path_string(&a.inputs.y2)],
        config: serde_json::to_value(&config)?,
        ranks: Some(fit.ranks),
        permutation_method: Some(fit.plan.method.to_string()),
        permutation_objective: fit.plan.objective.is_finite().then_some(fit.plan.objective),
        sign: Some(SignRecord::from(fit.sign)),
        explained: Some(fit.decomposition.explained),
        r12_zero: fit.r12_zero,
        bootstrap: fit.bootstrap,
        delta_theta: fit.diagnostics.map(|d| d.delta_theta),
        snr: fit.diagnostics.map(|d| d.snr),
        canonical_correlations: fit.canonical_correlations.clone(),
        channel_cosines: fit.channel_cosines.clone(),
        seed: a.seed,
        warnings: fit.warnings.clone(),
        timings,
        artifacts,
    };
    manifest.write(&manifest_path)?;
    Ok(serde_json::to_value(&manifest)?)
}

fn cmd_simulate(a: SimulateArgs) -> Result<serde_json::Value> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let options = StudyOptions { select_ranks: a.select_ranks, ..StudyOptions::default() };
    let mut cells = Vec::new();
    let mut artifacts = Vec::new();
    let total = a.theta.len() * a.p1.len() * a.noise.len();
    for &theta in &a.theta {
        for &p1 in &a.p1 {
            for &noise in &a.noise {
                let base =
                    if a.setup == 2 { SimulationConfig::setup2(theta, p1, noise) } else { SimulationConfig::setup1(theta, p1, noise) };
                let cfg = SimulationConfig { setup: a.setup, n: a.n, replications: a.reps, seed: a.seed, ..base };
                eprintln!("cell {}/{total}: setup {} θ={theta} p1={p1} σ²={noise}, {} replications", cells.len() + 1, a.setup, a.reps);
                let summary = run_replications(&cfg, &options)?;
                let csv = a.out.join(format!("cell_{:03}.csv", cells.len()));
                summary.write_csv(&csv)?;
                artifacts.push(path_string(&csv));
                cells.push(summary);
            }
        }
    }
    let summary_path = a.out.join("summary.json");
    artifacts.push(path_string(&summary_path));
    let doc = json!({ "cells": cells, "artifacts": artifacts });
    std::fs::write(&summary_path, serde_json::to_string_pretty(&doc)?)?;
    Ok(doc)
}

fn cmd_oracle(a: OracleArgs) -> Result<serde_json::Value> {
    let mut values = Vec::new();
    for theta in a.theta {
        if !(0.0..=75.0).contains(&theta) {
            eprintln!("warning: θ = {theta}° lies outside the 0°..75° sweep of the simulation design");
        }
        values.push(oracle_explained_variance(theta)?);
    }
    Ok(serde_json::to_value(values)?)
}

fn channel_basis(path: &Path, index: usize) -> Result<cdpa::Matrix> {
    let b = read_matrix::<f64>(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(orthonormal_basis(&MixingChannel { b, dataset_index: index })?)
}

fn cmd_match(a: MatchArgs) -> Result<serde_json::Value> {
    let q1 = channel_basis(&a.b1, 1)?;
    let q2 = channel_basis(&a.b2, 2)?;
    if q1.ncols() != q2.ncols() {
        return Err(CdpaError::BadDimensions(format!("column counts differ: {} vs {}", q1.ncols(), q2.ncols())).into());
    }
    let rows = q1.nrows().max(q2.nrows());
    let (q1, q2) = (pad_rows(&q1, rows), pad_rows(&q2, rows));
    let plan = match a.method {
        MatchArg::Dspfp => dspfp_match(&build_match_problem(&q1, &q2), &DspfpConfig::default()),
        MatchArg::Exhaustive => {
            if rows > EXHAUSTIVE_MAX {
                bail!(CdpaError::TooLarge { p: rows, max: EXHAUSTIVE_MAX });
            }
            exhaustive_match(&q1, &q2)?
        }
    };
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string(&plan.perm)?)?;
    }
    Ok(json!({ "perm": plan.perm, "objective": plan.objective, "method": plan.method }))
}

fn cmd_bootstrap(a: BootstrapArgs) -> Result<serde_json::Value> {
    let (y1, y2) = load_pair(&a.inputs)?;
    let rows = y1.nvars().max(y2.nvars());
    let plan = match permutation_source(&a.perm)? {
        PermutationSource::Identity => PermutationPlan::identity(rows),
        PermutationSource::Provided(p) => {
            if p.len() != rows {
                bail!(CdpaError::BadDimensions(format!("permutation has {} entries, expected {rows}", p.len())));
            }
            PermutationPlan::provided(p)?
        }
        _ => bail!(CdpaError::BadConfig("bootstrap takes identity or a permutation file".into())),
    };
    let ci = bootstrap_ci(&y1, &y2, a.ranks, &plan, a.reps, a.level, a.seed, !a.inputs.no_center, Default::default())?;
    if ci.failed > 0 {
        eprintln!("warning: {} of {} replicates failed at the fixed ranks", ci.failed, ci.replicates);
    }
    Ok(serde_json::to_value(ci)?)
}
