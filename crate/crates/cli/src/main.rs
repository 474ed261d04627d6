//! `subforest` — deterministic random-forest runs from config files.
//!
//! Subcommands: `gen` (sample a dataset from a model file), `fit` (fit and
//! serialize a forest), `predict` (forest + query file -> predictions), and
//! `exp consistency|sparsity|cutdist|cellvar` (experiment drivers emitting
//! metrics files). Every command is deterministic given its config; outputs
//! are written atomically. Exit codes: 0 success, 2 validation error,
//! 3 runtime assertion failure.

mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use subforest::dataset::Dataset;
use subforest::error::{Error, Result};
use subforest::experiments::{self, ExperimentOutput, ForestSettings};
use subforest::forest::{self, Forest, ForestParams};
use subforest::io_util::{format_f64, write_atomic};
use subforest::model::AdditiveModel;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "subforest", version, about = "Subsampled regression random forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file.
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from an additive model file.
    Gen,
    /// Fit a forest on a dataset and serialize it.
    Fit,
    /// Predict with a serialized forest on a query file.
    Predict,
    /// Run an experiment driver and write metrics files.
    Exp {
        #[command(subcommand)]
        kind: ExpKind,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum ExpKind {
    /// L2 error against the known regression function across the n grid.
    Consistency,
    /// Fraction of early cut directions on the informative coordinates.
    Sparsity,
    /// Distance between empirical and theoretical cut sequences.
    Cutdist,
    /// Within-cell variation of the regression function at the leaves.
    Cellvar,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            Error::Assertion(_) => 3,
            _ => 2,
        });
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = Some(out);
    }
    if let Some(threads) = cli.threads.or(cfg.threads).filter(|&t| t > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    let out_dir = cfg.out_dir();
    std::fs::create_dir_all(&out_dir)?;

    match cli.command {
        Command::Gen => cmd_gen(&cfg, &out_dir),
        Command::Fit => cmd_fit(&cfg, &out_dir),
        Command::Predict => cmd_predict(&cfg, &out_dir),
        Command::Exp { kind } => cmd_experiment(&cfg, &out_dir, kind),
    }
}

fn digest_of(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn cmd_gen(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let gen = cfg
        .gen
        .as_ref()
        .ok_or_else(|| Error::config("gen: missing [gen] section in the config"))?;
    if gen.n == 0 {
        return Err(Error::config("gen.n: must be at least 1"));
    }
    if !gen.model.exists() {
        return Err(Error::Config(format!("gen.model: no such file {}", gen.model.display())));
    }
    let model = AdditiveModel::load(&gen.model)?;
    let dataset = Dataset::sample(&model, gen.n, cfg.seed())?;
    let path = out_dir.join(gen.output.clone().unwrap_or_else(|| PathBuf::from("dataset.csv")));
    dataset.save(&path)?;
    println!("dataset: {}", path.display());
    println!("sha256: {}", digest_of(&path)?);
    Ok(())
}

fn forest_params(cfg: &RunConfig, n: usize, p: usize) -> Result<ForestParams> {
    let fc = cfg
        .forest
        .as_ref()
        .ok_or_else(|| Error::config("forest: missing [forest] section in the config"))?;
    let a_n = fc.subsample.unwrap_or(n);
    let t_n = fc.leaves.unwrap_or(a_n);
    let mtry = fc.mtry.unwrap_or_else(|| p.div_ceil(3).max(1));
    let params = ForestParams { trees: fc.trees, mtry, a_n, t_n, seed: cfg.seed() };
    params.validate(n, p)?;
    Ok(params)
}

fn cmd_fit(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let fit = cfg
        .fit
        .as_ref()
        .ok_or_else(|| Error::config("fit: missing [fit] section in the config"))?;
    let dataset = Dataset::load(&fit.dataset)?;
    let params = forest_params(cfg, dataset.n(), dataset.p())?;
    let forest = forest::fit(&dataset, params)?;
    let path = out_dir.join(fit.output.clone().unwrap_or_else(|| PathBuf::from("forest.json")));
    forest.save(&path)?;
    println!("forest: {}", path.display());
    println!("sha256: {}", digest_of(&path)?);
    Ok(())
}

/// Query files use the dataset layout; rows may carry `p` feature columns or
/// `p + 1` columns (trailing response ignored).
fn load_queries(path: &Path, expect_p: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty query file".into() })?;
    if header.trim() != "n,p,sigma,seed" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header 'n,p,sigma,seed', got '{header}'"),
        });
    }
    let (line_no, meta) = lines
        .next()
        .ok_or(Error::Parse { line: 2, message: "missing header values".into() })?;
    let fields: Vec<&str> = meta.split(',').collect();
    if fields.len() != 4 {
        return Err(Error::Parse { line: line_no + 1, message: "expected 4 header values".into() });
    }
    let p: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line: line_no + 1, message: "cannot parse p".into() })?;
    if p != expect_p {
        return Err(Error::Schema(format!(
            "query file has p = {p} but the forest was fit with p = {expect_p}"
        )));
    }
    let mut queries = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let raw: Vec<&str> = line.split(',').collect();
        if raw.len() != p && raw.len() != p + 1 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected {p} or {} columns, got {}", p + 1, raw.len()),
            });
        }
        let mut x = Vec::with_capacity(p);
        for cell in raw.iter().take(p) {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: idx + 1,
                message: format!("cannot parse value from '{cell}'"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "query outside [0,1] at line {}: {v}",
                    idx + 1
                )));
            }
            x.push(v);
        }
        queries.push(x);
    }
    Ok(queries)
}

fn cmd_predict(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let pc = cfg
        .predict
        .as_ref()
        .ok_or_else(|| Error::config("predict: missing [predict] section in the config"))?;
    let forest = Forest::load(&pc.forest)?;
    let queries = load_queries(&pc.queries, forest.p)?;
    let mut out = String::new();
    for x in &queries {
        out.push_str(&format_f64(forest.predict(x)?));
        out.push('\n');
    }
    let path =
        out_dir.join(pc.output.clone().unwrap_or_else(|| PathBuf::from("predictions.csv")));
    write_atomic(&path, out.as_bytes())?;
    println!("predictions: {}", path.display());
    println!("sha256: {}", digest_of(&path)?);
    Ok(())
}

fn cmd_experiment(cfg: &RunConfig, out_dir: &Path, kind: ExpKind) -> Result<()> {
    let ec = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| Error::config("experiment: missing [experiment] section in the config"))?;
    let model = AdditiveModel::load(&ec.model)?;
    let schedule = ec.schedule()?;
    let settings = ForestSettings { trees: ec.trees, mtry: ec.mtry.filter(|&m| m > 0) };
    let seed = cfg.seed();

    let need = |field: Option<usize>, name: &str| {
        field.ok_or_else(|| Error::Config(format!("experiment.{name}: required for this driver")))
    };

    let output: ExperimentOutput = match kind {
        ExpKind::Consistency => experiments::run_consistency(
            &model,
            &schedule,
            settings,
            ec.replicates,
            need(ec.n_test, "n_test")?,
            seed,
        )?,
        ExpKind::Sparsity => experiments::run_sparsity(
            &model,
            &schedule,
            need(ec.k, "k")?,
            settings,
            ec.replicates,
            need(ec.n_query, "n_query")?,
            seed,
        )?,
        ExpKind::Cutdist => experiments::run_cut_distance(
            &model,
            &schedule,
            need(ec.k, "k")?,
            settings,
            ec.replicates,
            need(ec.n_query, "n_query")?,
            seed,
        )?,
        ExpKind::Cellvar => experiments::run_cell_variation(
            &model,
            &schedule,
            settings,
            ec.replicates,
            need(ec.n_query, "n_query")?,
            ec.xi_grid.as_deref().unwrap_or(&[0.1, 0.25, 0.5, 1.0]),
            seed,
        )?,
    };

    let metrics_path = out_dir.join("metrics.csv");
    write_atomic(&metrics_path, experiments::metrics_csv(&output.records).as_bytes())?;

    let summary_path = out_dir.join("summary.txt");
    write_atomic(&summary_path, experiments::render_summary(&output.records).as_bytes())?;

    let mut timings = String::from("experiment,n,wall_ms\n");
    for t in &output.timings {
        timings.push_str(&format!("{},{},{}\n", t.experiment, t.n, t.wall_ms));
    }
    write_atomic(&out_dir.join("timings.csv"), timings.as_bytes())?;

    // one x-y file per aggregated metric, consumable by plotting tools
    let mut metric_names: Vec<String> = Vec::new();
    for r in &output.records {
        if r.replicate.is_none() && !metric_names.contains(&r.metric) {
            metric_names.push(r.metric.clone());
        }
    }
    for metric in &metric_names {
        let series = experiments::aggregated_series(&output.records, metric);
        let mut data = String::from("# n value std_error\n");
        for (n, v, se) in series {
            data.push_str(&format!("{n} {v} {se}\n"));
        }
        let safe: String = metric
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
            .collect();
        write_atomic(&out_dir.join(format!("plot_{safe}.dat")), data.as_bytes())?;
    }

    println!("metrics: {}", metrics_path.display());
    println!("sha256: {}", digest_of(&metrics_path)?);
    println!("summary: {}", summary_path.display());
    print!("{}", experiments::render_summary(&output.records));
    Ok(())
}
