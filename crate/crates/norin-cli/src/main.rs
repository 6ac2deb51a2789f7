//! Command-line driver for the reversible-normalization lab.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.
//! Every option can also come from a TOML or JSON config file via
//! `--config`; explicit flags override file values.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use norin::backbone::{train, BackboneCheckpoint, TrainConfig};
use norin::fit::{warm_start, FitMode, DEFAULT_Z};
use norin::harness::report::{render_reports, write_json, write_jsonl};
use norin::harness::{
    compare, degeneration_run, grid_sweep, sensitivity_sweep, DataSource, ExperimentConfig,
    RangeSpec, ShapeSource, SweepAxis,
};
use norin::normalize::{AffinePost, Normalizer, NormalizerKind, ShapeBox, ShapeDoc, ShapeParams};
use norin::search::{search, SearchSpace, TpeConfig};
use norin::series::SplitSpec;
use norin::Error;

#[derive(Parser)]
#[command(
    name = "norin",
    about = "Reversible-normalization lab: S_U instance normalization, shape fitting/search, and evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form quantile fit of the shape pair on the training split
    FitShape(FitShapeArgs),
    /// TPE shape search seeded at the closed-form warm start
    Search(SearchArgs),
    /// Train one run with a frozen normalizer
    Train(TrainArgs),
    /// Compare normalizers over a seed grid
    Compare(CompareArgs),
    /// Exhaustive test-MSE grid over the shape plane
    Grid(GridArgs),
    /// Joint shape-training runs recording the per-epoch shape trajectory
    Degenerate(DegenerateArgs),
    /// One-axis hyperparameter/seed sensitivity sweep
    Sweep(SweepArgs),
    /// Render CSV and text tables from serialized artifacts
    Report(ReportArgs),
}

/// Options shared by every data-consuming subcommand.
#[derive(Args, Clone)]
struct CommonArgs {
    /// CSV path or synth spec (`synth:bench`, `synth:seed=7,len=8000,...`)
    #[arg(long)]
    data: Option<String>,
    /// Timestamp column excluded from CSV values
    #[arg(long)]
    timestamp_col: Option<String>,
    /// Chronological split fractions `train:val:test`
    #[arg(long)]
    split: Option<String>,
    /// Lookback length T
    #[arg(short = 'T', long)]
    lookback: Option<usize>,
    /// Horizon length H (comma list for `compare`)
    #[arg(short = 'H', long)]
    horizon: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Early-stop patience in epochs (0 disables early stopping)
    #[arg(long)]
    patience: Option<usize>,
    /// Give each channel its own backbone weights
    #[arg(long)]
    per_channel_weights: bool,
    /// Enable the learnable post-affine inside the z-score normalizer
    #[arg(long)]
    revin_learnable: bool,
    /// TOML or JSON file with the same option names; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
}

/// File-config mirror of the common options.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<String>,
    timestamp_col: Option<String>,
    split: Option<String>,
    lookback: Option<usize>,
    horizon: Option<String>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    weight_decay: Option<f64>,
    patience: Option<usize>,
    seed: Option<u64>,
    seeds: Option<String>,
    trials: Option<usize>,
    hpo_seed: Option<u64>,
    z: Option<f64>,
    mode: Option<String>,
    normalizer: Option<String>,
    normalizers: Option<String>,
    delta: Option<f64>,
    epsilon: Option<f64>,
    shape: Option<PathBuf>,
}

struct Resolved {
    data: DataSource,
    split: SplitSpec,
    train: TrainConfig,
    horizons: Vec<usize>,
    revin_learnable: bool,
    file: FileConfig,
}

fn load_file_config(path: &Path) -> Result<FileConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {path:?}: {e}")))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("config {path:?}: {e}")))
    }
}

fn parse_split(text: &str) -> Result<SplitSpec, Error> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "split {text:?} must be train:val:test"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Config(format!("split part {p:?} is not a number")))
        })
        .collect::<Result<_, _>>()?;
    SplitSpec::new(nums[0], nums[1], nums[2])
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry {s:?}")))
        })
        .collect()
}

fn parse_box(delta: Option<&str>, epsilon: Option<&str>) -> Result<ShapeBox, Error> {
    let parse_pair = |text: &str, what: &str| -> Result<(f64, f64), Error> {
        let (lo, hi) = text
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("{what} box {text:?} must be lo:hi")))?;
        let lo = lo
            .parse()
            .map_err(|_| Error::Config(format!("{what} bound {lo:?} is not a number")))?;
        let hi = hi
            .parse()
            .map_err(|_| Error::Config(format!("{what} bound {hi:?} is not a number")))?;
        Ok((lo, hi))
    };
    let d = delta.map(|t| parse_pair(t, "delta")).transpose()?.unwrap_or((0.8, 5.0));
    let e = epsilon
        .map(|t| parse_pair(t, "epsilon"))
        .transpose()?
        .unwrap_or((-1.0, 1.0));
    ShapeBox::new(d.0, d.1, e.0, e.1)
}

impl CommonArgs {
    fn resolve(&self) -> Result<Resolved, Error> {
        let file = match &self.config {
            Some(path) => load_file_config(path)?,
            None => FileConfig::default(),
        };
        let data_text = self
            .data
            .clone()
            .or_else(|| file.data.clone())
            .ok_or_else(|| Error::Config("missing --data".into()))?;
        let ts = self
            .timestamp_col
            .clone()
            .or_else(|| file.timestamp_col.clone())
            .unwrap_or_else(|| "date".to_string());
        let data = DataSource::parse(&data_text, Some(&ts))?;
        let split = match self.split.as_deref().or(file.split.as_deref()) {
            Some(t) => parse_split(t)?,
            None => SplitSpec::default(),
        };
        let horizon_text = self
            .horizon
            .clone()
            .or_else(|| file.horizon.clone())
            .unwrap_or_else(|| "24".to_string());
        let horizons: Vec<usize> = parse_list(&horizon_text, "horizon")?;
        let defaults = TrainConfig::default();
        let train = TrainConfig {
            lookback: self.lookback.or(file.lookback).unwrap_or(96),
            horizon: *horizons.first().unwrap_or(&24),
            epochs: self.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            batch_size: self.batch.or(file.batch).unwrap_or(defaults.batch_size),
            lr: self.lr.or(file.lr).unwrap_or(defaults.lr),
            weight_decay: self
                .weight_decay
                .or(file.weight_decay)
                .unwrap_or(defaults.weight_decay),
            early_stop_patience: self
                .patience
                .or(file.patience)
                .unwrap_or(defaults.early_stop_patience),
            per_channel_weights: self.per_channel_weights,
            ..defaults
        };
        Ok(Resolved {
            data,
            split,
            train,
            horizons,
            revin_learnable: self.revin_learnable,
            file,
        })
    }
}

#[derive(Args)]
struct FitShapeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Quantile probe value
    #[arg(long)]
    z: Option<f64>,
    /// shared | per-channel
    #[arg(long)]
    mode: Option<String>,
    /// Output shape JSON (a fit_report.json lands next to it)
    #[arg(long, default_value = "shape.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trial budget
    #[arg(long)]
    trials: Option<usize>,
    /// Delta box `lo:hi`
    #[arg(long)]
    delta: Option<String>,
    /// Epsilon box `lo:hi`
    #[arg(long)]
    epsilon: Option<String>,
    /// Fixed seed for every trial's inner training run
    #[arg(long)]
    hpo_seed: Option<u64>,
    /// Sampler seed
    #[arg(long, default_value_t = 0)]
    sampler_seed: u64,
    /// Search per-channel (2C-dimensional) instead of one shared pair
    #[arg(long)]
    per_channel: bool,
    #[arg(long)]
    z: Option<f64>,
    /// Output best-shape JSON
    #[arg(long, default_value = "best.json")]
    out: PathBuf,
    /// Trial history JSON-lines
    #[arg(long, default_value = "trials.jsonl")]
    history: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// none | revin | norin
    #[arg(long)]
    normalizer: Option<String>,
    /// Shape JSON for the S_U normalizer (defaults to a warm start)
    #[arg(long)]
    shape: Option<PathBuf>,
    /// Explicit shared delta (with --epsilon, overrides --shape)
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output run JSON
    #[arg(long, default_value = "run.json")]
    out: PathBuf,
    /// Also write the trained backbone checkpoint here
    #[arg(long)]
    save_model: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma list from none|revin|norin
    #[arg(long)]
    normalizers: Option<String>,
    /// Comma list of training seeds
    #[arg(long)]
    seeds: Option<String>,
    /// warm | search | explicit | file
    #[arg(long, default_value = "warm")]
    shape_source: String,
    #[arg(long)]
    shape: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    hpo_seed: Option<u64>,
    #[arg(long)]
    z: Option<f64>,
    /// Output CSV (a table.json lands next to it)
    #[arg(long, default_value = "table.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Delta range `lo:hi:step`
    #[arg(long)]
    delta: String,
    /// Epsilon range `lo:hi:step`
    #[arg(long)]
    epsilon: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV (a grid.json lands next to it)
    #[arg(long, default_value = "grid.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct DegenerateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Learning rate for the jointly trained shape pair
    #[arg(long)]
    shape_lr: Option<f64>,
    #[arg(long)]
    seeds: Option<String>,
    /// Starting shape: explicit values or a shape JSON (default warm start)
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    shape: Option<PathBuf>,
    /// Output JSON-lines of per-seed runs (a traj.json summary lands next
    /// to it)
    #[arg(long, default_value = "traj.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// lr | batch | epochs | T | seed
    #[arg(long)]
    axis: String,
    /// Comma list of values for the chosen axis
    #[arg(long)]
    values: String,
    /// Normalizer under test
    #[arg(long, default_value = "norin")]
    normalizer: String,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    shape: Option<PathBuf>,
    /// Output CSV (a sweep.json lands next to it)
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding serialized artifacts
    #[arg(long)]
    dir: PathBuf,
    /// Directory for rendered tables
    #[arg(long)]
    out: PathBuf,
}

fn shape_source_from(
    kind: &str,
    shape: Option<&PathBuf>,
    delta: Option<f64>,
    epsilon: Option<f64>,
    trials: Option<usize>,
    hpo_seed: Option<u64>,
    z: f64,
) -> Result<ShapeSource, Error> {
    match kind {
        "warm" => Ok(ShapeSource::WarmStart {
            z,
            mode: FitMode::Shared,
        }),
        "search" => Ok(ShapeSource::Search {
            tpe: TpeConfig {
                n_trials: trials.unwrap_or(60),
                ..Default::default()
            },
            z,
            hpo_seed: hpo_seed.unwrap_or(42),
        }),
        "explicit" => {
            let (d, e) = match (delta, epsilon) {
                (Some(d), Some(e)) => (d, e),
                _ => {
                    return Err(Error::Config(
                        "explicit shape source needs --delta and --epsilon".into(),
                    ))
                }
            };
            Ok(ShapeSource::Explicit {
                delta: d,
                epsilon: e,
            })
        }
        "file" => {
            let path = shape
                .cloned()
                .ok_or_else(|| Error::Config("file shape source needs --shape".into()))?;
            Ok(ShapeSource::File { path })
        }
        other => Err(Error::Config(format!(
            "unknown shape source {other:?}, expected warm|search|explicit|file"
        ))),
    }
}

/// Starting shape for train/degenerate: explicit values, a file, or the
/// warm start.
fn resolve_start_shape(
    delta: Option<f64>,
    epsilon: Option<f64>,
    shape: Option<&PathBuf>,
    resolved: &Resolved,
    series: &norin::series::MultiSeries,
    z: f64,
) -> Result<ShapeParams, Error> {
    if let (Some(d), Some(e)) = (delta, epsilon) {
        return ShapeParams::shared(d, e, series.channels());
    }
    if let Some(path) = shape {
        let doc: ShapeDoc = norin::harness::report::read_json(path)?;
        return doc.to_params();
    }
    let (shape, _) = warm_start(
        series,
        &resolved.split,
        FitMode::Shared,
        z,
        &ShapeBox::default(),
    )?;
    Ok(shape)
}

fn json_sibling(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::FitShape(args) => {
            let resolved = args.common.resolve()?;
            let series = resolved.data.load()?;
            let z = args.z.or(resolved.file.z).unwrap_or(DEFAULT_Z);
            let mode = match args.mode.as_deref().or(resolved.file.mode.as_deref()) {
                Some(m) => FitMode::parse(m)?,
                None => FitMode::Shared,
            };
            let bounds = ShapeBox::default();
            let (shape, report) = warm_start(&series, &resolved.split, mode, z, &bounds)?;
            let doc = ShapeDoc::from_params(&shape, series.channel_names());
            write_json(&args.out, &doc)?;
            write_json(&args.out.with_file_name("fit_report.json"), &report)?;
            println!(
                "fit-shape: wrote {} (delta[0]={:.4}, epsilon[0]={:.4})",
                args.out.display(),
                shape.delta()[0],
                shape.epsilon()[0]
            );
            Ok(())
        }
        Command::Search(args) => {
            let resolved = args.common.resolve()?;
            let series = resolved.data.load()?;
            let bounds = parse_box(args.delta.as_deref(), args.epsilon.as_deref())?;
            let tpe = TpeConfig {
                n_trials: args.trials.or(resolved.file.trials).unwrap_or(60),
                seed: args.sampler_seed,
                ..Default::default()
            };
            let space = if args.per_channel {
                SearchSpace::per_channel(bounds, series.channels())
            } else {
                SearchSpace::shared(bounds, series.channels())
            };
            let z = args.z.or(resolved.file.z).unwrap_or(DEFAULT_Z);
            let hpo_seed = args.hpo_seed.or(resolved.file.hpo_seed).unwrap_or(42);
            let outcome = search(
                &series,
                &resolved.split,
                &resolved.train,
                &tpe,
                &space,
                z,
                hpo_seed,
            )?;
            let mut doc = ShapeDoc::from_params(&outcome.best, series.channel_names());
            doc.boundary_contacts = Some(outcome.boundary.clone());
            write_json(&args.out, &doc)?;
            write_jsonl(&args.history, &outcome.history)?;
            println!(
                "search: best objective {:.6} at trial {} (delta[0]={:.4}, epsilon[0]={:.4}{})",
                outcome.best_objective,
                outcome.best_index,
                outcome.best.delta()[0],
                outcome.best.epsilon()[0],
                if outcome.boundary.any() {
                    ", boundary contact"
                } else {
                    ""
                }
            );
            Ok(())
        }
        Command::Train(args) => {
            let resolved = args.common.resolve()?;
            let series = resolved.data.load()?;
            let kind = match args
                .normalizer
                .as_deref()
                .or(resolved.file.normalizer.as_deref())
            {
                Some(k) => NormalizerKind::parse(k)?,
                None => NormalizerKind::NoRin,
            };
            let normalizer = match kind {
                NormalizerKind::None => Normalizer::Identity,
                NormalizerKind::RevIn => Normalizer::RevIn {
                    post: if resolved.revin_learnable {
                        AffinePost::identity_enabled(series.channels())
                    } else {
                        AffinePost::disabled(series.channels())
                    },
                },
                NormalizerKind::NoRin => Normalizer::NoRin {
                    shape: resolve_start_shape(
                        args.delta.or(resolved.file.delta),
                        args.epsilon.or(resolved.file.epsilon),
                        args.shape.as_ref().or(resolved.file.shape.as_ref()),
                        &resolved,
                        &series,
                        resolved.file.z.unwrap_or(DEFAULT_Z),
                    )?,
                },
            };
            let cfg = TrainConfig {
                seed: args.seed.or(resolved.file.seed).unwrap_or(42),
                ..resolved.train.clone()
            };
            let outcome = train(&series, &resolved.split, &normalizer, &cfg)?;
            write_json(&args.out, &outcome.result)?;
            if let Some(model_path) = &args.save_model {
                let ck = BackboneCheckpoint::from_backbone(
                    &outcome.backbone,
                    cfg.seed,
                    &outcome.result.config_fingerprint,
                );
                write_json(model_path, &ck)?;
            }
            println!(
                "train[{}]: test mse {:.6}, mae {:.6} ({} epochs)",
                kind.name(),
                outcome.result.test_mse,
                outcome.result.test_mae,
                outcome.result.epochs_run
            );
            Ok(())
        }
        Command::Compare(args) => {
            let resolved = args.common.resolve()?;
            let normalizers: Vec<NormalizerKind> = parse_list::<String>(
                args.normalizers
                    .as_deref()
                    .or(resolved.file.normalizers.as_deref())
                    .unwrap_or("none,revin,norin"),
                "normalizer",
            )?
            .iter()
            .map(|s| NormalizerKind::parse(s))
            .collect::<Result<_, _>>()?;
            let seeds: Vec<u64> = parse_list(
                args.seeds
                    .as_deref()
                    .or(resolved.file.seeds.as_deref())
                    .unwrap_or("1,2,3"),
                "seed",
            )?;
            let z = args.z.or(resolved.file.z).unwrap_or(DEFAULT_Z);
            let shape_source = shape_source_from(
                &args.shape_source,
                args.shape.as_ref(),
                args.delta,
                args.epsilon,
                args.trials,
                args.hpo_seed,
                z,
            )?;
            let config = ExperimentConfig {
                data: resolved.data.clone(),
                split: resolved.split,
                horizons: resolved.horizons.clone(),
                normalizers,
                revin_learnable: resolved.revin_learnable,
                shape_source,
                bounds: ShapeBox::default(),
                seeds,
                train: resolved.train.clone(),
            };
            let table = compare(&config)?;
            let (csv, text) = norin::harness::report::render_comparison(&table);
            norin::harness::report::write_atomic(&args.out, csv.as_bytes())?;
            write_json(&json_sibling(&args.out), &table)?;
            print!("{text}");
            Ok(())
        }
        Command::Grid(args) => {
            let resolved = args.common.resolve()?;
            let delta = RangeSpec::parse(&args.delta)?;
            let epsilon = RangeSpec::parse(&args.epsilon)?;
            let config = ExperimentConfig {
                data: resolved.data.clone(),
                split: resolved.split,
                horizons: resolved.horizons.clone(),
                normalizers: vec![NormalizerKind::NoRin],
                revin_learnable: false,
                shape_source: ShapeSource::default(),
                bounds: ShapeBox::default(),
                seeds: vec![args.seed.or(resolved.file.seed).unwrap_or(42)],
                train: resolved.train.clone(),
            };
            let grid = grid_sweep(
                &config,
                &delta,
                &epsilon,
                args.seed.or(resolved.file.seed).unwrap_or(42),
            )?;
            let (csv, text) = norin::harness::report::render_grid(&grid);
            norin::harness::report::write_atomic(&args.out, csv.as_bytes())?;
            write_json(&json_sibling(&args.out), &grid)?;
            print!("{text}");
            Ok(())
        }
        Command::Degenerate(args) => {
            let resolved = args.common.resolve()?;
            let series = resolved.data.load()?;
            let seeds: Vec<u64> = parse_list(
                args.seeds
                    .as_deref()
                    .or(resolved.file.seeds.as_deref())
                    .unwrap_or("1,2,3,4,5"),
                "seed",
            )?;
            let start = resolve_start_shape(
                args.delta.or(resolved.file.delta),
                args.epsilon.or(resolved.file.epsilon),
                args.shape.as_ref().or(resolved.file.shape.as_ref()),
                &resolved,
                &series,
                resolved.file.z.unwrap_or(DEFAULT_Z),
            )?;
            let config = ExperimentConfig {
                data: resolved.data.clone(),
                split: resolved.split,
                horizons: resolved.horizons.clone(),
                normalizers: vec![NormalizerKind::NoRin],
                revin_learnable: false,
                shape_source: ShapeSource::default(),
                bounds: ShapeBox::default(),
                seeds,
                train: resolved.train.clone(),
            };
            let shape_lr = args.shape_lr.unwrap_or(1e-2);
            let summary = degeneration_run(&config, &start, shape_lr)?;
            write_jsonl(&args.out, &summary.runs)?;
            write_json(&json_sibling(&args.out), &summary)?;
            let (_, text) = norin::harness::report::render_degeneration(&summary);
            print!("{text}");
            Ok(())
        }
        Command::Sweep(args) => {
            let resolved = args.common.resolve()?;
            let axis = SweepAxis::parse(&args.axis)?;
            let values: Vec<f64> = parse_list(&args.values, "value")?;
            let kind = NormalizerKind::parse(&args.normalizer)?;
            let shape_source = if let (Some(d), Some(e)) = (args.delta, args.epsilon) {
                ShapeSource::Explicit {
                    delta: d,
                    epsilon: e,
                }
            } else if let Some(path) = args.shape.clone() {
                ShapeSource::File { path }
            } else {
                ShapeSource::default()
            };
            let config = ExperimentConfig {
                data: resolved.data.clone(),
                split: resolved.split,
                horizons: resolved.horizons.clone(),
                normalizers: vec![kind],
                revin_learnable: resolved.revin_learnable,
                shape_source,
                bounds: ShapeBox::default(),
                seeds: vec![resolved.file.seed.unwrap_or(42)],
                train: resolved.train.clone(),
            };
            let sweep = sensitivity_sweep(&config, axis, &values)?;
            let (csv, text) = norin::harness::report::render_sweep(&sweep);
            norin::harness::report::write_atomic(&args.out, csv.as_bytes())?;
            write_json(&json_sibling(&args.out), &sweep)?;
            print!("{text}");
            Ok(())
        }
        Command::Report(args) => {
            let written = render_reports(&args.dir, &args.out)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    if err.is_data_error() {
        2
    } else if matches!(err, Error::Config(_)) {
        1
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the error path too
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
