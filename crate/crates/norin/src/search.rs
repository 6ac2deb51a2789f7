//! The decoupled outer loop: a Tree-structured Parzen Estimator over the
//! shape box, warm-started from the closed-form fit.
//!
//! Proposal schedule: trial 0 evaluates the warm start verbatim; startup
//! trials draw from a truncated-normal prior concentrated around it; later
//! trials split the history into good/bad by objective, build per-axis
//! truncated-Gaussian Parzen mixtures over each set, draw candidates from
//! the good mixture, and keep the candidate with the highest
//! good-to-bad density ratio. The whole search is a pure function of
//! (data, configs, seeds); trial evaluations run the inner training loop at
//! a single fixed seed so the objective is deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::backbone::{train, TrainConfig};
use crate::fit::{warm_start, FitMode, FitReport};
use crate::normalize::{BoundaryContacts, Normalizer, ShapeBox, ShapeParams};
use crate::series::{MultiSeries, SplitSpec};
use crate::{Error, Result};

/// Objective value recorded for failed trials; keeps them out of the good
/// set and JSON-serializable.
pub const FAILED_OBJECTIVE: f64 = f64::MAX;

/// Distance from a box bound below which an axis counts as a boundary
/// contact.
pub const BOUNDARY_TOL: f64 = 1e-6;

/// The search box and its dimensionality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub bounds: ShapeBox,
    pub per_channel: bool,
    pub channels: usize,
}

impl SearchSpace {
    pub fn shared(bounds: ShapeBox, channels: usize) -> Self {
        Self {
            bounds,
            per_channel: false,
            channels,
        }
    }

    pub fn per_channel(bounds: ShapeBox, channels: usize) -> Self {
        Self {
            bounds,
            per_channel: true,
            channels,
        }
    }

    /// 2 in shared mode, 2C in per-channel mode.
    pub fn dims(&self) -> usize {
        if self.per_channel {
            2 * self.channels
        } else {
            2
        }
    }

    /// Per-axis `(lo, hi)`; delta axes first, then epsilon axes.
    fn axis_bounds(&self, axis: usize) -> (f64, f64) {
        let half = self.dims() / 2;
        if axis < half {
            (self.bounds.delta_lo, self.bounds.delta_hi)
        } else {
            (self.bounds.eps_lo, self.bounds.eps_hi)
        }
    }

    fn axes_of(&self, shape: &ShapeParams) -> Vec<f64> {
        if self.per_channel {
            shape
                .delta()
                .iter()
                .chain(shape.epsilon().iter())
                .copied()
                .collect()
        } else {
            vec![shape.delta()[0], shape.epsilon()[0]]
        }
    }

    fn shape_of(&self, axes: &[f64]) -> Result<ShapeParams> {
        if self.per_channel {
            let c = self.channels;
            ShapeParams::per_channel(axes[..c].to_vec(), axes[c..].to_vec())
        } else {
            ShapeParams::shared(axes[0], axes[1], self.channels)
        }
    }

    pub fn contains(&self, shape: &ShapeParams) -> bool {
        shape
            .delta()
            .iter()
            .zip(shape.epsilon().iter())
            .all(|(d, e)| self.bounds.contains(*d, *e))
    }

    /// Flags best-point axes within [`BOUNDARY_TOL`] of a box bound.
    pub fn boundary_contacts(&self, shape: &ShapeParams) -> BoundaryContacts {
        let near = |v: f64, lo: f64, hi: f64| (v - lo).abs() <= BOUNDARY_TOL || (v - hi).abs() <= BOUNDARY_TOL;
        BoundaryContacts {
            delta: shape
                .delta()
                .iter()
                .map(|d| near(*d, self.bounds.delta_lo, self.bounds.delta_hi))
                .collect(),
            epsilon: shape
                .epsilon()
                .iter()
                .map(|e| near(*e, self.bounds.eps_lo, self.bounds.eps_hi))
                .collect(),
        }
    }
}

/// Kernel bandwidth rule for the Parzen mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    Scott,
}

/// Sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub n_trials: usize,
    pub n_startup: usize,
    pub gamma_frac: f64,
    pub n_candidates: usize,
    pub seed: u64,
    pub bandwidth: BandwidthRule,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            n_trials: 60,
            n_startup: 10,
            gamma_frac: 0.25,
            n_candidates: 24,
            seed: 0,
            bandwidth: BandwidthRule::Scott,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be positive".into()));
        }
        if self.n_startup >= self.n_trials && self.n_trials > 1 {
            return Err(Error::Config(format!(
                "n_startup ({}) must be below n_trials ({})",
                self.n_startup, self.n_trials
            )));
        }
        if !(self.gamma_frac > 0.0 && self.gamma_frac <= 0.5) {
            return Err(Error::Config(format!(
                "gamma_frac must lie in (0, 0.5], got {}",
                self.gamma_frac
            )));
        }
        if self.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be positive".into()));
        }
        Ok(())
    }
}

/// Completion status of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Complete,
    Failed,
}

/// One outer-loop evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub candidate: ShapeParams,
    pub objective: f64,
    pub seed: u64,
    pub status: TrialStatus,
}

impl TrialRecord {
    pub fn is_complete(&self) -> bool {
        self.status == TrialStatus::Complete
    }
}

const STARTUP_STD_FRAC: f64 = 0.25;
const BANDWIDTH_FLOOR_FRAC: f64 = 1e-3;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Samples a normal truncated to `[lo, hi]` by inverse-CDF.
fn sample_truncated(rng: &mut ChaCha8Rng, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let n = std_normal();
    let a = n.cdf((lo - mu) / sigma);
    let b = n.cdf((hi - mu) / sigma);
    if b - a < 1e-300 {
        // the component carries no mass inside the box
        return mu.clamp(lo, hi);
    }
    let u = rng.random_range(a..b);
    (mu + sigma * n.inverse_cdf(u)).clamp(lo, hi)
}

/// Log-density of the truncated normal at `x`.
fn log_density_truncated(x: f64, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let n = std_normal();
    let mass = n.cdf((hi - mu) / sigma) - n.cdf((lo - mu) / sigma);
    let z = (x - mu) / sigma;
    let log_phi = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - sigma.ln();
    log_phi - mass.max(1e-300).ln()
}

/// Per-axis Parzen mixture with a shared bandwidth.
struct AxisMixture {
    centers: Vec<f64>,
    bandwidth: f64,
    lo: f64,
    hi: f64,
}

impl AxisMixture {
    fn new(centers: Vec<f64>, lo: f64, hi: f64) -> Self {
        let n = centers.len() as f64;
        let mean = centers.iter().sum::<f64>() / n;
        let var = centers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
        // Scott rule, floored to keep the kernel non-degenerate
        let scott = var.sqrt() * n.powf(-0.2);
        let bandwidth = scott.max(BANDWIDTH_FLOOR_FRAC * (hi - lo));
        Self {
            centers,
            bandwidth,
            lo,
            hi,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let k = rng.random_range(0..self.centers.len());
        sample_truncated(rng, self.centers[k], self.bandwidth, self.lo, self.hi)
    }

    fn log_density(&self, x: f64) -> f64 {
        // log-mean-exp over components
        let logs: Vec<f64> = self
            .centers
            .iter()
            .map(|mu| log_density_truncated(x, *mu, self.bandwidth, self.lo, self.hi))
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let sum: f64 = logs.iter().map(|l| (l - m).exp()).sum();
        m + (sum / logs.len() as f64).ln()
    }
}

/// Splits history into good/bad axis values: completed trials sorted by
/// `(objective, index)`, the lowest `ceil(gamma_frac * n_complete)` are good;
/// everything else (including failed trials) is bad.
fn split_history(history: &[TrialRecord], space: &SearchSpace, gamma_frac: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut order: Vec<&TrialRecord> = history.iter().collect();
    order.sort_by(|a, b| {
        a.objective
            .total_cmp(&b.objective)
            .then(a.index.cmp(&b.index))
    });
    let n_complete = order.iter().filter(|t| t.is_complete()).count();
    let n_good = ((gamma_frac * n_complete as f64).ceil() as usize).max(1).min(n_complete);
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (rank, trial) in order.iter().enumerate() {
        let axes = space.axes_of(&trial.candidate);
        if rank < n_good && trial.is_complete() {
            good.push(axes);
        } else {
            bad.push(axes);
        }
    }
    (good, bad)
}

/// Proposes the next candidate given the committed history.
///
/// Deterministic given `(history, config, seed)`: the proposal RNG stream is
/// derived from the config seed and the history length.
pub fn propose(
    history: &[TrialRecord],
    space: &SearchSpace,
    config: &TpeConfig,
    warm: &ShapeParams,
) -> Result<ShapeParams> {
    config.validate()?;
    if !space.contains(warm) {
        return Err(Error::Search(format!(
            "warm start {:?}/{:?} lies outside the box",
            warm.delta(),
            warm.epsilon()
        )));
    }
    if history.is_empty() {
        return Ok(warm.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(history.len() as u64);

    let dims = space.dims();
    let warm_axes = space.axes_of(warm);

    if history.len() < config.n_startup {
        let mut axes = Vec::with_capacity(dims);
        for d in 0..dims {
            let (lo, hi) = space.axis_bounds(d);
            let sigma = STARTUP_STD_FRAC * (hi - lo);
            axes.push(sample_truncated(&mut rng, warm_axes[d], sigma, lo, hi));
        }
        return space.shape_of(&axes);
    }

    let (good, bad) = split_history(history, space, config.gamma_frac);
    if good.is_empty() {
        // all trials failed so far: fall back to the startup prior
        let mut axes = Vec::with_capacity(dims);
        for d in 0..dims {
            let (lo, hi) = space.axis_bounds(d);
            let sigma = STARTUP_STD_FRAC * (hi - lo);
            axes.push(sample_truncated(&mut rng, warm_axes[d], sigma, lo, hi));
        }
        return space.shape_of(&axes);
    }

    let mut good_mix = Vec::with_capacity(dims);
    let mut bad_mix = Vec::with_capacity(dims);
    for d in 0..dims {
        let (lo, hi) = space.axis_bounds(d);
        good_mix.push(AxisMixture::new(good.iter().map(|a| a[d]).collect(), lo, hi));
        let bad_centers: Vec<f64> = if bad.is_empty() {
            // degenerate split: score against the warm start as a single
            // wide component
            vec![warm_axes[d]]
        } else {
            bad.iter().map(|a| a[d]).collect()
        };
        bad_mix.push(AxisMixture::new(bad_centers, lo, hi));
    }

    let mut best_axes: Option<(f64, Vec<f64>)> = None;
    for _ in 0..config.n_candidates {
        let axes: Vec<f64> = (0..dims).map(|d| good_mix[d].sample(&mut rng)).collect();
        let score: f64 = (0..dims)
            .map(|d| good_mix[d].log_density(axes[d]) - bad_mix[d].log_density(axes[d]))
            .sum();
        let better = best_axes.as_ref().map_or(true, |(s, _)| score > *s);
        if better {
            best_axes = Some((score, axes));
        }
    }
    space.shape_of(&best_axes.expect("n_candidates >= 1").1)
}

/// Evaluates one candidate by training with the shape frozen at the fixed
/// HPO seed; training failures become failed trials, never panics.
pub fn evaluate_trial(
    candidate: &ShapeParams,
    series: &MultiSeries,
    split: &SplitSpec,
    train_config: &TrainConfig,
    hpo_seed: u64,
    index: usize,
) -> TrialRecord {
    let cfg = TrainConfig {
        seed: hpo_seed,
        joint_shape_training: false,
        ..train_config.clone()
    };
    let normalizer = Normalizer::NoRin {
        shape: candidate.clone(),
    };
    match train(series, split, &normalizer, &cfg) {
        Ok(outcome) if outcome.result.best_val_mse.is_finite() => TrialRecord {
            index,
            candidate: candidate.clone(),
            objective: outcome.result.best_val_mse,
            seed: hpo_seed,
            status: TrialStatus::Complete,
        },
        _ => TrialRecord {
            index,
            candidate: candidate.clone(),
            objective: FAILED_OBJECTIVE,
            seed: hpo_seed,
            status: TrialStatus::Failed,
        },
    }
}

/// Result of a completed search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: ShapeParams,
    pub best_objective: f64,
    pub best_index: usize,
    pub boundary: BoundaryContacts,
    pub warm: ShapeParams,
    pub history: Vec<TrialRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_report: Option<FitReport>,
}

/// Core ask-tell loop against an arbitrary objective. Trial 0 is the warm
/// start; the best complete trial wins, ties by lower index.
pub fn search_with_objective<F>(
    mut objective: F,
    warm: &ShapeParams,
    space: &SearchSpace,
    config: &TpeConfig,
) -> Result<SearchOutcome>
where
    F: FnMut(&ShapeParams, usize) -> TrialRecord,
{
    config.validate()?;
    let mut history: Vec<TrialRecord> = Vec::with_capacity(config.n_trials);
    for i in 0..config.n_trials {
        let candidate = propose(&history, space, config, warm)?;
        let mut record = objective(&candidate, i);
        record.index = i;
        if !record.objective.is_finite() {
            record.objective = FAILED_OBJECTIVE;
            record.status = TrialStatus::Failed;
        }
        history.push(record);
    }
    let best = history
        .iter()
        .filter(|t| t.is_complete())
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)))
        .cloned()
        .ok_or_else(|| Error::Search("all trials failed".into()))?;
    Ok(SearchOutcome {
        boundary: space.boundary_contacts(&best.candidate),
        best: best.candidate.clone(),
        best_objective: best.objective,
        best_index: best.index,
        warm: warm.clone(),
        history,
        fit_report: None,
    })
}

/// Full decoupled search: closed-form warm start, then TPE against the
/// validation MSE of the inner training loop.
pub fn search(
    series: &MultiSeries,
    split: &SplitSpec,
    train_config: &TrainConfig,
    tpe_config: &TpeConfig,
    space: &SearchSpace,
    z: f64,
    hpo_seed: u64,
) -> Result<SearchOutcome> {
    let mode = if space.per_channel {
        FitMode::PerChannel
    } else {
        FitMode::Shared
    };
    let (warm, fit_report) = warm_start(series, split, mode, z, &space.bounds)?;
    let mut outcome = search_with_objective(
        |candidate, index| evaluate_trial(candidate, series, split, train_config, hpo_seed, index),
        &warm,
        space,
        tpe_config,
    )?;
    outcome.fit_report = Some(fit_report);
    Ok(outcome)
}
