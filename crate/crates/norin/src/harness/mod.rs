//! Experiment orchestration: normalizer comparisons over seed grids,
//! significance testing, shape-grid sweeps, hyperparameter/seed sensitivity
//! sweeps, the joint shape-training driver, and report rendering.
//!
//! Independent runs (table cells, seeds, grid points) are dispatched through
//! the order-preserving parallel map, so every emitted artifact is a pure
//! function of (config, seeds, data).

pub mod report;
pub mod stats;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::backbone::{train, RunResult, ShapeSnapshot, TrainConfig};
use crate::exec::map_indices;
use crate::fit::{warm_start, FitMode, FitReport, DEFAULT_Z};
use crate::normalize::{AffinePost, Normalizer, NormalizerKind, ShapeBox, ShapeDoc, ShapeParams};
use crate::search::{SearchOutcome, TpeConfig};
use crate::series::{ingest_csv, synth_heavy_tailed, MultiSeries, SplitSpec, SynthSpec};
use crate::{Error, Result};

pub use stats::{wilcoxon_signed_rank, SignedRankTest, WilcoxonMethod};

/// Where the series comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        timestamp_column: Option<String>,
    },
    Synth {
        seed: u64,
        len: usize,
        channels: usize,
        spec: SynthSpec,
    },
}

impl DataSource {
    /// Parses either a CSV path or a `synth:` spec string such as
    /// `synth:seed=7,len=8000,channels=3,delta=1.0,epsilon=0.0,scale=1.0,
    /// trend=0.0005,amp=1.0,period=96`. `synth:bench` is the fixed
    /// desk-scale heavy-tailed benchmark.
    pub fn parse(text: &str, timestamp_column: Option<&str>) -> Result<Self> {
        if let Some(rest) = text.strip_prefix("synth:") {
            if rest == "bench" {
                return Ok(Self::bench());
            }
            let mut seed = 0u64;
            let mut len = 1000usize;
            let mut channels = 1usize;
            let mut spec = SynthSpec::default();
            for kv in rest.split(',').filter(|s| !s.is_empty()) {
                let (key, value) = kv.split_once('=').ok_or_else(|| {
                    Error::Config(format!("synth spec entry {kv:?} is not key=value"))
                })?;
                let parse_f = || -> Result<f64> {
                    value
                        .parse()
                        .map_err(|_| Error::Config(format!("synth spec {key}={value:?} is not a number")))
                };
                match key {
                    "seed" => {
                        seed = value.parse().map_err(|_| {
                            Error::Config(format!("synth spec seed={value:?} is not an integer"))
                        })?
                    }
                    "len" => {
                        len = value.parse().map_err(|_| {
                            Error::Config(format!("synth spec len={value:?} is not an integer"))
                        })?
                    }
                    "channels" => {
                        channels = value.parse().map_err(|_| {
                            Error::Config(format!("synth spec channels={value:?} is not an integer"))
                        })?
                    }
                    "delta" => spec.delta = parse_f()?,
                    "epsilon" => spec.epsilon = parse_f()?,
                    "loc" => spec.loc = parse_f()?,
                    "scale" => spec.scale = parse_f()?,
                    "trend" => spec.trend = parse_f()?,
                    "amp" => spec.season_amp = parse_f()?,
                    "period" => spec.season_period = parse_f()?,
                    other => {
                        return Err(Error::Config(format!("unknown synth spec key {other:?}")))
                    }
                }
            }
            Ok(DataSource::Synth {
                seed,
                len,
                channels,
                spec,
            })
        } else {
            Ok(DataSource::Csv {
                path: PathBuf::from(text),
                timestamp_column: timestamp_column.map(str::to_string),
            })
        }
    }

    /// The fixed seeded heavy-tailed desk benchmark: 3 channels, 8000 steps,
    /// unit-delta S_U noise over a mild trend and daily-style seasonality.
    pub fn bench() -> Self {
        DataSource::Synth {
            seed: 7,
            len: 8000,
            channels: 3,
            spec: SynthSpec {
                trend: 0.0005,
                season_amp: 1.0,
                season_period: 96.0,
                delta: 1.0,
                epsilon: 0.0,
                loc: 0.0,
                scale: 1.0,
            },
        }
    }

    pub fn load(&self) -> Result<MultiSeries> {
        match self {
            DataSource::Csv {
                path,
                timestamp_column,
            } => ingest_csv(path, timestamp_column.as_deref()),
            DataSource::Synth {
                seed,
                len,
                channels,
                spec,
            } => synth_heavy_tailed(*seed, *len, *channels, spec),
        }
    }

    pub fn name(&self) -> String {
        match self {
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            DataSource::Synth {
                seed,
                len,
                channels,
                ..
            } => format!("synth-s{seed}-l{len}-c{channels}"),
        }
    }
}

/// How the frozen S_U shape pair is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ShapeSource {
    WarmStart {
        z: f64,
        mode: FitMode,
    },
    Search {
        tpe: TpeConfig,
        z: f64,
        hpo_seed: u64,
    },
    Explicit {
        delta: f64,
        epsilon: f64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for ShapeSource {
    fn default() -> Self {
        ShapeSource::WarmStart {
            z: DEFAULT_Z,
            mode: FitMode::Shared,
        }
    }
}

/// A resolved shape with its provenance artifacts.
#[derive(Debug, Clone)]
pub struct ResolvedShape {
    pub shape: ShapeParams,
    pub fit_report: Option<FitReport>,
    pub search: Option<SearchOutcome>,
}

impl ShapeSource {
    /// Materializes the shape pair for a given horizon.
    pub fn resolve(
        &self,
        series: &MultiSeries,
        split: &SplitSpec,
        bounds: &ShapeBox,
        train_config: &TrainConfig,
    ) -> Result<ResolvedShape> {
        match self {
            ShapeSource::WarmStart { z, mode } => {
                let (shape, report) = warm_start(series, split, *mode, *z, bounds)?;
                Ok(ResolvedShape {
                    shape,
                    fit_report: Some(report),
                    search: None,
                })
            }
            ShapeSource::Search { tpe, z, hpo_seed } => {
                let space = crate::search::SearchSpace::shared(*bounds, series.channels());
                let outcome =
                    crate::search::search(series, split, train_config, tpe, &space, *z, *hpo_seed)?;
                Ok(ResolvedShape {
                    shape: outcome.best.clone(),
                    fit_report: outcome.fit_report.clone(),
                    search: Some(outcome),
                })
            }
            ShapeSource::Explicit { delta, epsilon } => Ok(ResolvedShape {
                shape: ShapeParams::shared(*delta, *epsilon, series.channels())?,
                fit_report: None,
                search: None,
            }),
            ShapeSource::File { path } => {
                let doc: ShapeDoc = report::read_json(path)?;
                Ok(ResolvedShape {
                    shape: doc.to_params()?,
                    fit_report: None,
                    search: None,
                })
            }
        }
    }
}

/// Full experiment description for `compare` and the sweep drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub split: SplitSpec,
    pub horizons: Vec<usize>,
    pub normalizers: Vec<NormalizerKind>,
    /// Enables the learnable post-affine inside the z-score normalizer.
    pub revin_learnable: bool,
    pub shape_source: ShapeSource,
    pub bounds: ShapeBox,
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.normalizers.is_empty() {
            return Err(Error::Config("need at least one normalizer".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::Config("need at least one horizon".into()));
        }
        self.train.validate()
    }

    fn make_normalizer(&self, kind: NormalizerKind, shape: &ShapeParams, channels: usize) -> Normalizer {
        match kind {
            NormalizerKind::None => Normalizer::Identity,
            NormalizerKind::RevIn => Normalizer::RevIn {
                post: if self.revin_learnable {
                    AffinePost::identity_enabled(channels)
                } else {
                    AffinePost::disabled(channels)
                },
            },
            NormalizerKind::NoRin => Normalizer::NoRin {
                shape: shape.clone(),
            },
        }
    }
}

/// One seed's metrics inside a table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCell {
    pub seed: u64,
    pub test_mse: Option<f64>,
    pub test_mae: Option<f64>,
    pub val_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-normalizer aggregate over seeds for one table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub normalizer: NormalizerKind,
    pub mean_test_mse: Option<f64>,
    /// Sample standard deviation over seeds; present only with 2+ seeds.
    pub std_test_mse: Option<f64>,
    pub mean_val_mse: Option<f64>,
    pub runs: Vec<RunCell>,
    pub failed: bool,
}

/// One `(dataset, horizon)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub dataset: String,
    pub horizon: usize,
    pub cells: Vec<CellStat>,
    /// Index into `cells` of the lowest mean (ties by listed order).
    pub winner: Option<usize>,
}

/// Wilcoxon summary of the treatment column against each baseline column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonReport {
    pub treatment: NormalizerKind,
    pub entries: Vec<WilcoxonEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonEntry {
    pub baseline: NormalizerKind,
    pub test: SignedRankTest,
}

/// Shape used for one horizon's S_U column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonShape {
    pub horizon: usize,
    pub doc: ShapeDoc,
}

/// The comparison table artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub normalizers: Vec<NormalizerKind>,
    pub seeds: Vec<u64>,
    pub rows: Vec<CompareRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shapes: Vec<HorizonShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<WilcoxonReport>,
}

fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Trains every (horizon, normalizer, seed) cell and aggregates the table.
///
/// Failed runs are recorded per cell; the table is still emitted. With the
/// S_U normalizer present alongside baselines and 2+ rows, a paired Wilcoxon
/// report over row means is attached.
pub fn compare(config: &ExperimentConfig) -> Result<ComparisonTable> {
    config.validate()?;
    let series = config.data.load()?;
    let channels = series.channels();
    let dataset = config.data.name();

    // resolve the frozen shape once per horizon (search objectives depend on
    // the horizon; the warm start does not, but one rule is simpler)
    let needs_shape = config.normalizers.contains(&NormalizerKind::NoRin);
    let mut shapes: Vec<HorizonShape> = Vec::new();
    let mut shape_per_horizon: Vec<ShapeParams> = Vec::new();
    for &h in &config.horizons {
        let train_cfg = TrainConfig {
            horizon: h,
            ..config.train.clone()
        };
        let shape = if needs_shape {
            let resolved = config
                .shape_source
                .resolve(&series, &config.split, &config.bounds, &train_cfg)?;
            shapes.push(HorizonShape {
                horizon: h,
                doc: ShapeDoc::from_params(&resolved.shape, series.channel_names()),
            });
            resolved.shape
        } else {
            ShapeParams::shared(1.0, 0.0, channels)?
        };
        shape_per_horizon.push(shape);
    }

    // flatten (horizon, normalizer, seed) into independent jobs
    struct Job {
        h_idx: usize,
        n_idx: usize,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for h_idx in 0..config.horizons.len() {
        for n_idx in 0..config.normalizers.len() {
            for &seed in &config.seeds {
                jobs.push(Job { h_idx, n_idx, seed });
            }
        }
    }
    let results: Vec<RunCell> = map_indices(jobs.len(), |j| {
        let job = &jobs[j];
        let horizon = config.horizons[job.h_idx];
        let kind = config.normalizers[job.n_idx];
        let normalizer = config.make_normalizer(kind, &shape_per_horizon[job.h_idx], channels);
        let cfg = TrainConfig {
            horizon,
            seed: job.seed,
            joint_shape_training: false,
            ..config.train.clone()
        };
        match train(&series, &config.split, &normalizer, &cfg) {
            Ok(out) => RunCell {
                seed: job.seed,
                test_mse: Some(out.result.test_mse),
                test_mae: Some(out.result.test_mae),
                val_mse: Some(out.result.val_mse),
                error: None,
            },
            Err(e) => RunCell {
                seed: job.seed,
                test_mse: None,
                test_mae: None,
                val_mse: None,
                error: Some(e.to_string()),
            },
        }
    });

    let n_seeds = config.seeds.len();
    let mut rows = Vec::with_capacity(config.horizons.len());
    for (h_idx, &horizon) in config.horizons.iter().enumerate() {
        let mut cells = Vec::with_capacity(config.normalizers.len());
        for (n_idx, &kind) in config.normalizers.iter().enumerate() {
            let base = h_idx * config.normalizers.len() * n_seeds + n_idx * n_seeds;
            let runs: Vec<RunCell> = results[base..base + n_seeds].to_vec();
            let ok: Vec<f64> = runs.iter().filter_map(|r| r.test_mse).collect();
            let ok_val: Vec<f64> = runs.iter().filter_map(|r| r.val_mse).collect();
            let failed = ok.len() != runs.len();
            cells.push(CellStat {
                normalizer: kind,
                mean_test_mse: if ok.is_empty() {
                    None
                } else {
                    Some(ok.iter().sum::<f64>() / ok.len() as f64)
                },
                std_test_mse: sample_std(&ok),
                mean_val_mse: if ok_val.is_empty() {
                    None
                } else {
                    Some(ok_val.iter().sum::<f64>() / ok_val.len() as f64)
                },
                runs,
                failed,
            });
        }
        let winner = cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.mean_test_mse.map(|m| (i, m)))
            .min_by(|(ia, ma), (ib, mb)| ma.total_cmp(mb).then(ia.cmp(ib)))
            .map(|(i, _)| i);
        rows.push(CompareRow {
            dataset: dataset.clone(),
            horizon,
            cells,
            winner,
        });
    }

    // significance of the S_U column against each baseline over row means
    let wilcoxon = if needs_shape && config.normalizers.len() > 1 {
        let norin_idx = config
            .normalizers
            .iter()
            .position(|k| *k == NormalizerKind::NoRin)
            .expect("checked");
        let norin_means: Vec<f64> = rows
            .iter()
            .filter_map(|r| r.cells[norin_idx].mean_test_mse)
            .collect();
        if norin_means.len() == rows.len() && !rows.is_empty() {
            let mut entries = Vec::new();
            for (i, &kind) in config.normalizers.iter().enumerate() {
                if i == norin_idx {
                    continue;
                }
                let base_means: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| r.cells[i].mean_test_mse)
                    .collect();
                if base_means.len() == norin_means.len() {
                    entries.push(WilcoxonEntry {
                        baseline: kind,
                        test: wilcoxon_signed_rank(&base_means, &norin_means)?,
                    });
                }
            }
            if entries.is_empty() {
                None
            } else {
                Some(WilcoxonReport {
                    treatment: NormalizerKind::NoRin,
                    entries,
                })
            }
        } else {
            None
        }
    } else {
        None
    };

    Ok(ComparisonTable {
        normalizers: config.normalizers.clone(),
        seeds: config.seeds.clone(),
        rows,
        shapes,
        wilcoxon,
    })
}

/// An inclusive numeric range `lo:hi:step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl RangeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "range {text:?} must be lo:hi:step"
            )));
        }
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| Error::Config(format!("range part {p:?} is not a number")))
            })
            .collect::<Result<_>>()?;
        let spec = Self {
            lo: nums[0],
            hi: nums[1],
            step: nums[2],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Config(format!("range step must be positive, got {}", self.step)));
        }
        if self.hi < self.lo {
            return Err(Error::Config(format!(
                "range must satisfy lo <= hi, got {}:{}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    /// Inclusive grid values `lo, lo+step, ..., hi`.
    pub fn values(&self) -> Vec<f64> {
        if self.lo == self.hi {
            return vec![self.lo];
        }
        let count = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=count).map(|k| self.lo + k as f64 * self.step).collect()
    }
}

/// The shape-plane grid artifact: test MSE per `(delta, epsilon)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub dataset: String,
    pub horizon: usize,
    pub seed: u64,
    pub deltas: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Row-major: `mse[i][j]` is deltas[i] x epsilons[j].
    pub mse: Vec<Vec<Option<f64>>>,
    /// `(delta index, epsilon index)` of the smallest completed cell.
    pub argmin: Option<(usize, usize)>,
}

/// Exhaustively trains one run per grid point at a fixed seed.
pub fn grid_sweep(
    config: &ExperimentConfig,
    delta_range: &RangeSpec,
    eps_range: &RangeSpec,
    seed: u64,
) -> Result<GridResult> {
    delta_range.validate()?;
    eps_range.validate()?;
    let series = config.data.load()?;
    let channels = series.channels();
    let horizon = *config
        .horizons
        .first()
        .ok_or_else(|| Error::Config("grid sweep needs a horizon".into()))?;
    let deltas = delta_range.values();
    let epsilons = eps_range.values();
    if let Some(d) = deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Error::Config(format!("grid delta {d} is not positive")));
    }

    let n_eps = epsilons.len();
    let cells: Vec<Option<f64>> = map_indices(deltas.len() * n_eps, |idx| {
        let (i, j) = (idx / n_eps, idx % n_eps);
        let shape = ShapeParams::shared(deltas[i], epsilons[j], channels).ok()?;
        let cfg = TrainConfig {
            horizon,
            seed,
            joint_shape_training: false,
            ..config.train.clone()
        };
        train(&series, &config.split, &Normalizer::NoRin { shape }, &cfg)
            .ok()
            .map(|out| out.result.test_mse)
    });

    let mse: Vec<Vec<Option<f64>>> = deltas
        .iter()
        .enumerate()
        .map(|(i, _)| cells[i * n_eps..(i + 1) * n_eps].to_vec())
        .collect();
    let argmin = cells
        .iter()
        .enumerate()
        .filter_map(|(idx, v)| v.map(|m| (idx, m)))
        .min_by(|(ia, ma), (ib, mb)| ma.total_cmp(mb).then(ia.cmp(ib)))
        .map(|(idx, _)| (idx / n_eps, idx % n_eps));

    Ok(GridResult {
        dataset: config.data.name(),
        horizon,
        seed,
        deltas,
        epsilons,
        mse,
        argmin,
    })
}

/// Outcome of one joint-training run plus its drift summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerationRun {
    pub seed: u64,
    pub initial_delta: f64,
    pub final_delta: f64,
    pub drift_up: bool,
    /// First epoch (1-based) whose mean delta exceeds the initial value.
    pub epochs_to_first_increase: Option<usize>,
    pub result: RunResult,
}

/// Aggregate over seeds for the joint-training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerationSummary {
    pub runs: Vec<DegenerationRun>,
    pub upward_drift_count: usize,
}

fn mean_delta(snapshot: &ShapeSnapshot) -> f64 {
    snapshot.delta.iter().sum::<f64>() / snapshot.delta.len() as f64
}

/// Runs joint shape training from `start_shape` for every seed and records
/// the per-epoch shape trajectory plus drift summaries.
pub fn degeneration_run(
    config: &ExperimentConfig,
    start_shape: &ShapeParams,
    shape_lr: f64,
) -> Result<DegenerationSummary> {
    config.validate()?;
    let series = config.data.load()?;
    let horizon = *config.horizons.first().expect("validated");

    let runs: Vec<Result<DegenerationRun>> = map_indices(config.seeds.len(), |s| {
        let seed = config.seeds[s];
        let cfg = TrainConfig {
            horizon,
            seed,
            joint_shape_training: true,
            shape_lr,
            ..config.train.clone()
        };
        let normalizer = Normalizer::NoRin {
            shape: start_shape.clone(),
        };
        let out = train(&series, &config.split, &normalizer, &cfg)?;
        let initial = out
            .result
            .initial_shape
            .as_ref()
            .map(mean_delta)
            .unwrap_or_else(|| start_shape.delta().iter().sum::<f64>() / start_shape.channels() as f64);
        let final_delta = out
            .result
            .shape_trajectory
            .last()
            .map(mean_delta)
            .unwrap_or(initial);
        let epochs_to_first_increase = out
            .result
            .shape_trajectory
            .iter()
            .position(|s| mean_delta(s) > initial)
            .map(|p| p + 1);
        Ok(DegenerationRun {
            seed,
            initial_delta: initial,
            final_delta,
            drift_up: final_delta > initial,
            epochs_to_first_increase,
            result: out.result,
        })
    });
    let runs: Vec<DegenerationRun> = runs.into_iter().collect::<Result<_>>()?;
    let upward_drift_count = runs.iter().filter(|r| r.drift_up).count();
    Ok(DegenerationSummary {
        runs,
        upward_drift_count,
    })
}

/// Which training hyperparameter a sensitivity sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Lr,
    Batch,
    Epochs,
    Lookback,
    Seed,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(SweepAxis::Lr),
            "batch" => Ok(SweepAxis::Batch),
            "epochs" => Ok(SweepAxis::Epochs),
            "T" | "lookback" => Ok(SweepAxis::Lookback),
            "seed" => Ok(SweepAxis::Seed),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?}, expected lr|batch|epochs|T|seed"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lr => "lr",
            SweepAxis::Batch => "batch",
            SweepAxis::Epochs => "epochs",
            SweepAxis::Lookback => "T",
            SweepAxis::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub test_mse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One-axis sensitivity table, with seed-axis dispersion statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub normalizer: NormalizerKind,
    pub rows: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    /// Coefficient of variation `std/mean` (seed axis only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<f64>,
}

/// Varies one hyperparameter at a time with the shape frozen; everything
/// else comes from the base config.
pub fn sensitivity_sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    config.validate()?;
    let series = config.data.load()?;
    let channels = series.channels();
    let horizon = *config.horizons.first().expect("validated");
    let kind = config.normalizers[0];

    // shape is resolved once from the base config and stays frozen
    let base_cfg = TrainConfig {
        horizon,
        ..config.train.clone()
    };
    let shape = if kind == NormalizerKind::NoRin {
        config
            .shape_source
            .resolve(&series, &config.split, &config.bounds, &base_cfg)?
            .shape
    } else {
        ShapeParams::shared(1.0, 0.0, channels)?
    };

    let rows: Vec<SweepRow> = map_indices(values.len(), |i| {
        let v = values[i];
        let mut cfg = TrainConfig {
            horizon,
            joint_shape_training: false,
            ..config.train.clone()
        };
        let valid = match axis {
            SweepAxis::Lr => {
                cfg.lr = v;
                v > 0.0
            }
            SweepAxis::Batch => {
                cfg.batch_size = v as usize;
                v >= 1.0
            }
            SweepAxis::Epochs => {
                cfg.epochs = v as usize;
                v >= 0.0
            }
            SweepAxis::Lookback => {
                cfg.lookback = v as usize;
                v >= 1.0
            }
            SweepAxis::Seed => {
                cfg.seed = v as u64;
                v >= 0.0
            }
        };
        if !valid {
            return SweepRow {
                value: v,
                test_mse: None,
                error: Some(format!("invalid {} value {v}", axis.name())),
            };
        }
        let normalizer = config.make_normalizer(kind, &shape, channels);
        match train(&series, &config.split, &normalizer, &cfg) {
            Ok(out) => SweepRow {
                value: v,
                test_mse: Some(out.result.test_mse),
                error: None,
            },
            Err(e) => SweepRow {
                value: v,
                test_mse: None,
                error: Some(e.to_string()),
            },
        }
    });

    let (mean, std, cv) = if axis == SweepAxis::Seed {
        let ok: Vec<f64> = rows.iter().filter_map(|r| r.test_mse).collect();
        if ok.is_empty() {
            (None, None, None)
        } else {
            let mean = ok.iter().sum::<f64>() / ok.len() as f64;
            let std = sample_std(&ok);
            let cv = std.map(|s| s / mean);
            (Some(mean), std, cv)
        }
    } else {
        (None, None, None)
    };

    Ok(SweepResult {
        axis,
        normalizer: kind,
        rows,
        mean,
        std,
        cv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synth {
                seed: 3,
                len: 400,
                channels: 2,
                spec: SynthSpec {
                    trend: 0.002,
                    season_amp: 1.0,
                    season_period: 12.0,
                    ..Default::default()
                },
            },
            split: SplitSpec::default(),
            horizons: vec![4],
            normalizers: vec![
                NormalizerKind::None,
                NormalizerKind::RevIn,
                NormalizerKind::NoRin,
            ],
            revin_learnable: false,
            shape_source: ShapeSource::Explicit {
                delta: 1.0,
                epsilon: 0.0,
            },
            bounds: ShapeBox::default(),
            seeds: vec![1, 2],
            train: TrainConfig {
                lookback: 12,
                horizon: 4,
                epochs: 3,
                batch_size: 32,
                ..Default::default()
            },
        }
    }

    #[test]
    fn data_source_parsing() {
        let d = DataSource::parse("synth:seed=5,len=100,channels=2,delta=1.5", None).unwrap();
        match d {
            DataSource::Synth {
                seed,
                len,
                channels,
                spec,
            } => {
                assert_eq!((seed, len, channels), (5, 100, 2));
                assert_eq!(spec.delta, 1.5);
            }
            other => panic!("{other:?}"),
        }
        assert!(DataSource::parse("synth:bad", None).is_err());
        assert!(DataSource::parse("synth:delta=abc", None).is_err());
        let b = DataSource::parse("synth:bench", None).unwrap();
        assert_eq!(b, DataSource::bench());
        let c = DataSource::parse("data/ETTh1.csv", Some("date")).unwrap();
        assert_eq!(c.name(), "ETTh1");
    }

    #[test]
    fn range_spec_values() {
        let r = RangeSpec::parse("3.0:5.0:0.2").unwrap();
        let v = r.values();
        assert_eq!(v.len(), 11);
        assert_eq!(v[0], 3.0);
        assert!((v[10] - 5.0).abs() < 1e-12);

        let single = RangeSpec::parse("2.5:2.5:0.1").unwrap();
        assert_eq!(single.values(), vec![2.5]);

        assert!(RangeSpec::parse("1:2").is_err());
        assert!(RangeSpec::parse("2:1:0.5").is_err());
        assert!(RangeSpec::parse("1:2:0").is_err());
    }

    #[test]
    fn compare_emits_full_table() {
        let cfg = small_config();
        let table = compare(&cfg).unwrap();
        assert_eq!(table.rows.len(), 1);
        let row = &table.rows[0];
        assert_eq!(row.cells.len(), 3);
        for cell in &row.cells {
            assert!(!cell.failed);
            assert!(cell.std_test_mse.is_some()); // two seeds
            assert_eq!(cell.runs.len(), 2);
        }
        assert!(row.winner.is_some());
        // winner is the argmin by listed order
        let means: Vec<f64> = row.cells.iter().map(|c| c.mean_test_mse.unwrap()).collect();
        let w = row.winner.unwrap();
        assert!(means.iter().all(|m| means[w] <= *m));
        // wilcoxon present (norin + baselines)
        assert!(table.wilcoxon.is_some());
    }

    #[test]
    fn compare_single_cell_has_no_std() {
        let mut cfg = small_config();
        cfg.normalizers = vec![NormalizerKind::None];
        cfg.seeds = vec![1];
        let table = compare(&cfg).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.cells.len(), 1);
        assert!(row.cells[0].std_test_mse.is_none());
        assert!(table.wilcoxon.is_none());
    }

    #[test]
    fn compare_identical_columns_tie_to_first() {
        let mut cfg = small_config();
        cfg.normalizers = vec![NormalizerKind::None, NormalizerKind::None];
        let table = compare(&cfg).unwrap();
        let row = &table.rows[0];
        assert_eq!(row.cells[0].mean_test_mse, row.cells[1].mean_test_mse);
        assert_eq!(row.winner, Some(0));
    }

    #[test]
    fn compare_is_deterministic() {
        let cfg = small_config();
        let a = compare(&cfg).unwrap();
        let b = compare(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compare_matches_standalone_train() {
        let cfg = small_config();
        let table = compare(&cfg).unwrap();
        let series = cfg.data.load().unwrap();
        // reproduce the revin cell, seed 2, by a direct train call
        let train_cfg = TrainConfig {
            horizon: 4,
            seed: 2,
            ..cfg.train.clone()
        };
        let out = train(
            &series,
            &cfg.split,
            &Normalizer::RevIn {
                post: AffinePost::disabled(2),
            },
            &train_cfg,
        )
        .unwrap();
        let cell = &table.rows[0].cells[1];
        assert_eq!(cell.runs[1].test_mse, Some(out.result.test_mse));
    }

    #[test]
    fn grid_sweep_structure() {
        let mut cfg = small_config();
        cfg.train.epochs = 1;
        let dr = RangeSpec::parse("1.0:1.4:0.2").unwrap();
        let er = RangeSpec::parse("-0.2:0.2:0.2").unwrap();
        let grid = grid_sweep(&cfg, &dr, &er, 42).unwrap();
        assert_eq!(grid.deltas.len(), 3);
        assert_eq!(grid.epsilons.len(), 3);
        assert_eq!(grid.mse.len(), 3);
        assert!(grid.mse.iter().all(|row| row.len() == 3));
        let (ai, aj) = grid.argmin.unwrap();
        let amin = grid.mse[ai][aj].unwrap();
        for row in &grid.mse {
            for v in row.iter().flatten() {
                assert!(amin <= *v);
            }
        }

        // 1x1 grid equals a direct train call
        let one = grid_sweep(
            &cfg,
            &RangeSpec::parse("1.2:1.2:0.1").unwrap(),
            &RangeSpec::parse("0.0:0.0:0.1").unwrap(),
            42,
        )
        .unwrap();
        let series = cfg.data.load().unwrap();
        let direct = train(
            &series,
            &cfg.split,
            &Normalizer::NoRin {
                shape: ShapeParams::shared(1.2, 0.0, 2).unwrap(),
            },
            &TrainConfig {
                horizon: 4,
                seed: 42,
                ..cfg.train.clone()
            },
        )
        .unwrap();
        assert_eq!(one.mse[0][0], Some(direct.result.test_mse));
        assert_eq!(one.argmin, Some((0, 0)));
    }

    #[test]
    fn degeneration_zero_lr_is_flat() {
        let mut cfg = small_config();
        cfg.seeds = vec![1];
        cfg.train.epochs = 2;
        let start = ShapeParams::shared(1.0, 0.0, 2).unwrap();
        let summary = degeneration_run(&cfg, &start, 0.0).unwrap();
        assert_eq!(summary.runs.len(), 1);
        let run = &summary.runs[0];
        assert_eq!(run.initial_delta, 1.0);
        assert_eq!(run.final_delta, 1.0);
        assert!(!run.drift_up);
        assert_eq!(run.result.shape_trajectory.len(), run.result.epochs_run);

        // zero epochs: empty trajectory
        let mut cfg0 = cfg.clone();
        cfg0.train.epochs = 0;
        let summary = degeneration_run(&cfg0, &start, 0.1).unwrap();
        assert!(summary.runs[0].result.shape_trajectory.is_empty());
    }

    #[test]
    fn sweep_axes() {
        let mut cfg = small_config();
        cfg.normalizers = vec![NormalizerKind::NoRin];
        cfg.train.epochs = 1;

        // single value equals a direct train call
        let single = sensitivity_sweep(&cfg, SweepAxis::Lr, &[1e-2]).unwrap();
        assert_eq!(single.rows.len(), 1);
        let series = cfg.data.load().unwrap();
        let direct = train(
            &series,
            &cfg.split,
            &Normalizer::NoRin {
                shape: ShapeParams::shared(1.0, 0.0, 2).unwrap(),
            },
            &TrainConfig {
                horizon: 4,
                ..cfg.train.clone()
            },
        )
        .unwrap();
        assert_eq!(single.rows[0].test_mse, Some(direct.result.test_mse));
        assert!(single.cv.is_none());

        // seed axis reports dispersion
        let seeds = sensitivity_sweep(&cfg, SweepAxis::Seed, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(seeds.rows.len(), 3);
        let mean = seeds.mean.unwrap();
        let std = seeds.std.unwrap();
        assert!((seeds.cv.unwrap() - std / mean).abs() < 1e-15);

        // epochs axis on the convex problem: more epochs never worse
        let mut cfg2 = cfg.clone();
        cfg2.normalizers = vec![NormalizerKind::None];
        cfg2.train.early_stop_patience = 0;
        let rows = sensitivity_sweep(&cfg2, SweepAxis::Epochs, &[10.0, 20.0]).unwrap();
        let a = rows.rows[0].test_mse.unwrap();
        let b = rows.rows[1].test_mse.unwrap();
        assert!(b <= a, "mse(20)={b} vs mse(10)={a}");

        assert!(sensitivity_sweep(&cfg, SweepAxis::Lr, &[]).is_err());
    }
}
