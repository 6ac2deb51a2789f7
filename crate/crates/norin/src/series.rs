//! Multichannel series: ingestion, synthetic generation, chronological
//! splits, sliding windows, and moment/metric computation.
//!
//! All values are `f64` and validated finite at construction; everything in
//! this module is a pure function over immutable inputs.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayView3, Axis, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec::map_indices;
use crate::{Error, Result};

/// A multichannel time series with `L` steps and `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiSeries {
    values: Array2<f64>,
    channel_names: Vec<String>,
    timestamps: Option<Vec<String>>,
}

impl MultiSeries {
    /// Builds a series, validating the invariants: `L >= 1`, `C >= 1`, all
    /// values finite, and channel names distinct with exactly `C` entries.
    pub fn new(
        values: Array2<f64>,
        channel_names: Vec<String>,
        timestamps: Option<Vec<String>>,
    ) -> Result<Self> {
        let (len, channels) = values.dim();
        if len < 1 || channels < 1 {
            return Err(Error::Data(format!(
                "series must have L >= 1 and C >= 1, got {len}x{channels}"
            )));
        }
        if channel_names.len() != channels {
            return Err(Error::Data(format!(
                "expected {channels} channel names, got {}",
                channel_names.len()
            )));
        }
        for (i, a) in channel_names.iter().enumerate() {
            if channel_names[..i].contains(a) {
                return Err(Error::Data(format!("duplicate channel name {a:?}")));
            }
        }
        if let Some(ts) = &timestamps {
            if ts.len() != len {
                return Err(Error::Data(format!(
                    "expected {len} timestamps, got {}",
                    ts.len()
                )));
            }
        }
        if let Some((idx, _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at step {}, channel {:?}",
                idx.0, channel_names[idx.1]
            )));
        }
        Ok(Self {
            values,
            channel_names,
            timestamps,
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn timestamps(&self) -> Option<&[String]> {
        self.timestamps.as_deref()
    }
}

/// Chronological split fractions; must sum to 1 within 1e-9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        for (name, f) in [
            ("train_frac", train_frac),
            ("val_frac", val_frac),
            ("test_frac", test_frac),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1), got {f}")));
            }
        }
        if (train_frac + val_frac + test_frac - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions must sum to 1, got {}",
                train_frac + val_frac + test_frac
            )));
        }
        Ok(Self {
            train_frac,
            val_frac,
            test_frac,
        })
    }

    /// Half-open index range `[start, end)` of a split part for a series of
    /// length `len`. The three parts partition `0..len` exhaustively.
    pub fn range(&self, len: usize, part: Part) -> (usize, usize) {
        let train_end = (len as f64 * self.train_frac).floor() as usize;
        let val_end = (len as f64 * (self.train_frac + self.val_frac)).floor() as usize;
        match part {
            Part::Train => (0, train_end),
            Part::Val => (train_end, val_end),
            Part::Test => (val_end, len),
        }
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

/// Which chronological part of a split to select.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Val => "val",
            Part::Test => "test",
        }
    }
}

/// Aligned (lookback, horizon) window pairs sliced stride-1 from a series.
///
/// `lookbacks` has shape `(N, T, C)` and `horizons` `(N, H, C)`; window `i`'s
/// horizon starts at the step immediately after its lookback ends.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub lookbacks: Array3<f64>,
    pub horizons: Array3<f64>,
}

impl WindowBatch {
    pub fn num_windows(&self) -> usize {
        self.lookbacks.dim().0
    }

    pub fn lookback_len(&self) -> usize {
        self.lookbacks.dim().1
    }

    pub fn horizon_len(&self) -> usize {
        self.horizons.dim().1
    }

    pub fn channels(&self) -> usize {
        self.lookbacks.dim().2
    }

    /// Copies the window rows `idx` into a new batch (used for mini-batches).
    pub fn select(&self, idx: &[usize]) -> WindowBatch {
        WindowBatch {
            lookbacks: self.lookbacks.select(Axis(0), idx),
            horizons: self.horizons.select(Axis(0), idx),
        }
    }
}

/// Slices stride-1 (lookback, horizon) windows from one chronological part.
pub fn make_windows(
    series: &MultiSeries,
    split: &SplitSpec,
    part: Part,
    lookback: usize,
    horizon: usize,
) -> Result<WindowBatch> {
    if lookback == 0 || horizon == 0 {
        return Err(Error::Config(
            "lookback and horizon must be positive".into(),
        ));
    }
    let (start, end) = split.range(series.len(), part);
    let split_len = end - start;
    if split_len < lookback + horizon {
        return Err(Error::SplitTooShort {
            part: part.name(),
            len: split_len,
            needed: lookback + horizon,
        });
    }
    let n = split_len - lookback - horizon + 1;
    let channels = series.channels();
    let values = series.values();
    let mut lookbacks = Array3::zeros((n, lookback, channels));
    let mut horizons = Array3::zeros((n, horizon, channels));
    for i in 0..n {
        let lb_start = start + i;
        lookbacks
            .index_axis_mut(Axis(0), i)
            .assign(&values.slice(ndarray::s![lb_start..lb_start + lookback, ..]));
        let hz_start = lb_start + lookback;
        horizons
            .index_axis_mut(Axis(0), i)
            .assign(&values.slice(ndarray::s![hz_start..hz_start + horizon, ..]));
    }
    Ok(WindowBatch {
        lookbacks,
        horizons,
    })
}

/// Generator settings for [`synth_heavy_tailed`].
///
/// Each channel is `trend*t + season_amp*sin(2*pi*(t/season_period + phase_c))`
/// plus noise obtained by pushing standard-normal draws through the S_U
/// inverse map `loc + scale*sinh((z - epsilon)/delta)`. Channel `c` gets phase
/// `c/C`, so channels differ while the noise law (and hence the ground-truth
/// shape pair) is shared and known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub trend: f64,
    pub season_amp: f64,
    pub season_period: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub loc: f64,
    pub scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            trend: 0.0,
            season_amp: 0.0,
            season_period: 24.0,
            delta: 1.0,
            epsilon: 0.0,
            loc: 0.0,
            scale: 1.0,
        }
    }
}

/// Generates a deterministic heavy-tailed multichannel series.
///
/// A pure function of its arguments: each channel draws from its own seeded
/// stream, so output is identical across thread counts and runs.
pub fn synth_heavy_tailed(
    seed: u64,
    len: usize,
    channels: usize,
    params: &SynthSpec,
) -> Result<MultiSeries> {
    if len < 1 || channels < 1 {
        return Err(Error::Config(format!(
            "synthetic series needs L >= 1 and C >= 1, got {len}x{channels}"
        )));
    }
    if !(params.delta > 0.0) || !(params.scale > 0.0) {
        return Err(Error::Config(format!(
            "generator requires delta > 0 and scale > 0, got delta={} scale={}",
            params.delta, params.scale
        )));
    }
    if !(params.season_period > 0.0) {
        return Err(Error::Config("season_period must be positive".into()));
    }
    let columns: Vec<Vec<f64>> = map_indices(channels, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64 + 1);
        let phase = c as f64 / channels as f64;
        (0..len)
            .map(|t| {
                let t_f = t as f64;
                let z: f64 = rng.sample(StandardNormal);
                let noise =
                    params.loc + params.scale * ((z - params.epsilon) / params.delta).sinh();
                params.trend * t_f
                    + params.season_amp
                        * (std::f64::consts::TAU * (t_f / params.season_period + phase)).sin()
                    + noise
            })
            .collect()
    });
    let mut values = Array2::zeros((len, channels));
    for (c, col) in columns.iter().enumerate() {
        for (t, v) in col.iter().enumerate() {
            values[[t, c]] = *v;
        }
    }
    let names = (0..channels).map(|c| format!("ch{c}")).collect();
    MultiSeries::new(values, names, None)
}

/// Reads a header-first CSV into a series, excluding `timestamp_column` from
/// the value columns when present.
pub fn ingest_csv(path: &Path, timestamp_column: Option<&str>) -> Result<MultiSeries> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let ts_idx = timestamp_column.and_then(|name| headers.iter().position(|h| h == name));
    let channel_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != ts_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if channel_names.is_empty() {
        return Err(Error::Data("csv has no value columns".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut timestamps: Vec<String> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let row_no = row_idx + 1; // 1-based data row, header excluded
        let mut row = Vec::with_capacity(channel_names.len());
        let mut col_cursor = 0usize;
        for (i, cell) in record.iter().enumerate() {
            if Some(i) == ts_idx {
                timestamps.push(cell.to_string());
                continue;
            }
            let column = channel_names
                .get(col_cursor)
                .cloned()
                .unwrap_or_else(|| format!("col{i}"));
            col_cursor += 1;
            let v: f64 = cell.trim().parse().map_err(|_| Error::NonNumericCell {
                row: row_no,
                column: column.clone(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteCell {
                    row: row_no,
                    column,
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Data(format!(
            "csv {path:?} has fewer than 2 data rows"
        )));
    }
    let mut values = Array2::zeros((rows.len(), channel_names.len()));
    for (r, row) in rows.iter().enumerate() {
        if row.len() != channel_names.len() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                detail: format!("row {} has {} cells, expected {}", r + 1, row.len(), channel_names.len()),
            });
        }
        for (c, v) in row.iter().enumerate() {
            values[[r, c]] = *v;
        }
    }
    MultiSeries::new(
        values,
        channel_names,
        if ts_idx.is_some() { Some(timestamps) } else { None },
    )
}

/// Mean squared error over all elements; shapes must match.
pub fn mse<D: Dimension>(pred: &ndarray::ArrayView<f64, D>, target: &ndarray::ArrayView<f64, D>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mse: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (a, b) in pred.iter().zip(target.iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Mean absolute error over all elements; shapes must match.
pub fn mae<D: Dimension>(pred: &ndarray::ArrayView<f64, D>, target: &ndarray::ArrayView<f64, D>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mae: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (a, b) in pred.iter().zip(target.iter()) {
        acc += (a - b).abs();
    }
    Ok(acc / n)
}

/// Convenience for the common 3-D prediction/target case.
pub fn mse3(pred: &ArrayView3<f64>, target: &ArrayView3<f64>) -> Result<f64> {
    mse(pred, target)
}

/// Population central moments of a 1-D sample.
///
/// `variance` divides by `n`; skewness is `m3/m2^1.5` and kurtosis the raw
/// fourth standardized moment `m4/m2^2` (normal reference value 3). Both are
/// `None` when the variance is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mean: f64,
    pub variance: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
}

pub fn moments(sample: &[f64]) -> Result<MomentSummary> {
    if sample.len() < 2 {
        return Err(Error::Data(format!(
            "moments need at least 2 points, got {}",
            sample.len()
        )));
    }
    if let Some(v) = sample.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("moments input contains {v}")));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in sample {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (Some(m3 / m2.powf(1.5)), Some(m4 / (m2 * m2)))
    } else {
        (None, None)
    };
    Ok(MomentSummary {
        mean,
        variance: m2,
        skewness,
        kurtosis,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn demo_series(len: usize, channels: usize) -> MultiSeries {
        let values = Array2::from_shape_fn((len, channels), |(t, c)| (t * channels + c) as f64);
        let names = (0..channels).map(|c| format!("ch{c}")).collect();
        MultiSeries::new(values, names, None).unwrap()
    }

    #[test]
    fn series_rejects_duplicates_and_nonfinite() {
        let values = Array2::zeros((3, 2));
        assert!(MultiSeries::new(values.clone(), vec!["a".into(), "a".into()], None).is_err());
        let mut bad = values.clone();
        bad[[1, 0]] = f64::NAN;
        assert!(MultiSeries::new(bad, vec!["a".into(), "b".into()], None).is_err());
    }

    #[test]
    fn window_counts_match_hand_counts() {
        // half-train split of a double-length series gives an exact split length
        let split = SplitSpec::new(0.5, 0.25, 0.25).unwrap();

        let series = demo_series(20, 1); // train split length 10
        let batch = make_windows(&series, &split, Part::Train, 4, 2).unwrap();
        assert_eq!(batch.num_windows(), 5); // 10 - 4 - 2 + 1

        let series = demo_series(12, 1); // train split length 6
        let batch = make_windows(&series, &split, Part::Train, 4, 2).unwrap();
        assert_eq!(batch.num_windows(), 1);

        let series = demo_series(10, 1); // train split length 5
        let err = make_windows(&series, &split, Part::Train, 4, 2).unwrap_err();
        assert!(matches!(err, Error::SplitTooShort { .. }));
    }

    #[test]
    fn windows_align_horizon_after_lookback() {
        let series = demo_series(24, 2);
        let split = SplitSpec::new(0.5, 0.25, 0.25).unwrap();
        let batch = make_windows(&series, &split, Part::Train, 3, 2).unwrap();
        for i in 0..batch.num_windows() {
            let last_lb = batch.lookbacks[[i, 2, 0]];
            let first_hz = batch.horizons[[i, 0, 0]];
            // values are 2*t for channel 0, so consecutive steps differ by 2
            assert_eq!(first_hz, last_lb + 2.0);
        }
    }

    #[test]
    fn window_coverage_reproduces_leading_values() {
        let series = demo_series(40, 2);
        let split = SplitSpec::default();
        let (start, end) = split.range(40, Part::Train);
        let t = 5;
        let h = 3;
        let batch = make_windows(&series, &split, Part::Train, t, h).unwrap();
        let n = (end - start) - t - h + 1;
        assert_eq!(batch.num_windows(), n);
        for i in 0..n {
            for c in 0..2 {
                assert_eq!(batch.lookbacks[[i, 0, c]], series.values()[[start + i, c]]);
            }
        }
    }

    #[test]
    fn splits_partition_exhaustively() {
        let split = SplitSpec::default();
        for len in [10usize, 97, 8000] {
            let (a0, a1) = split.range(len, Part::Train);
            let (b0, b1) = split.range(len, Part::Val);
            let (c0, c1) = split.range(len, Part::Test);
            assert_eq!(a0, 0);
            assert_eq!(a1, b0);
            assert_eq!(b1, c0);
            assert_eq!(c1, len);
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let spec = SynthSpec {
            trend: 0.01,
            season_amp: 1.0,
            ..Default::default()
        };
        let a = synth_heavy_tailed(7, 500, 3, &spec).unwrap();
        let b = synth_heavy_tailed(7, 500, 3, &spec).unwrap();
        assert_eq!(a, b);
        let c = synth_heavy_tailed(8, 500, 3, &spec).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synth_rejects_bad_generator_settings() {
        let bad = SynthSpec {
            delta: 0.0,
            ..Default::default()
        };
        assert!(synth_heavy_tailed(1, 10, 1, &bad).is_err());
        let bad = SynthSpec {
            scale: -1.0,
            ..Default::default()
        };
        assert!(synth_heavy_tailed(1, 10, 1, &bad).is_err());
    }

    #[test]
    fn synth_near_linear_noise_is_near_normal() {
        // delta large => sinh((z-eps)/delta) ~ z/delta: noise is a scaled normal
        let spec = SynthSpec {
            delta: 1e6,
            scale: 1e6, // keep the noise at unit scale for a stable kurtosis estimate
            ..Default::default()
        };
        let series = synth_heavy_tailed(42, 100_000, 1, &spec).unwrap();
        let sample: Vec<f64> = series.values().column(0).to_vec();
        let m = moments(&sample).unwrap();
        assert!((m.kurtosis.unwrap() - 3.0).abs() < 0.2, "kurtosis {:?}", m.kurtosis);
    }

    #[test]
    fn synth_unit_delta_noise_is_heavy_tailed() {
        let spec = SynthSpec::default(); // delta = 1, eps = 0, no trend/season
        let series = synth_heavy_tailed(42, 100_000, 1, &spec).unwrap();
        let sample: Vec<f64> = series.values().column(0).to_vec();
        let m = moments(&sample).unwrap();
        assert!(m.kurtosis.unwrap() > 3.5, "kurtosis {:?}", m.kurtosis);
    }

    #[test]
    fn ingest_small_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,a,b").unwrap();
        writeln!(f, "2020-01-01,1.0,2.0").unwrap();
        writeln!(f, "2020-01-02,3.0,4.0").unwrap();
        writeln!(f, "2020-01-03,5.0,6.0").unwrap();
        let series = ingest_csv(f.path(), Some("date")).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(series.channels(), 2);
        assert_eq!(series.channel_names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(series.values()[[2, 1]], 6.0);
        assert_eq!(series.timestamps().unwrap()[0], "2020-01-01");
    }

    #[test]
    fn ingest_reports_bad_cell_position() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,a,b").unwrap();
        for i in 1..=4 {
            writeln!(f, "d{i},1.0,2.0").unwrap();
        }
        writeln!(f, "d5,1.0,abc").unwrap();
        let err = ingest_csv(f.path(), Some("date")).unwrap_err();
        match err {
            Error::NonNumericCell { row, column } => {
                assert_eq!(row, 5);
                assert_eq!(column, "b");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_header_only_and_missing() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "date,a,b").unwrap();
        assert!(ingest_csv(f.path(), Some("date")).is_err());
        assert!(ingest_csv(Path::new("/nonexistent/file.csv"), None).is_err());
    }

    #[test]
    fn metrics_hand_values() {
        let p = ndarray::arr1(&[0.0, 0.0]);
        let t = ndarray::arr1(&[1.0, 1.0]);
        assert_eq!(mse(&p.view(), &t.view()).unwrap(), 1.0);
        assert_eq!(mae(&p.view(), &t.view()).unwrap(), 1.0);
        let p = ndarray::arr1(&[0.0, 2.0]);
        assert_eq!(mse(&p.view(), &t.view()).unwrap(), 1.0);
        assert_eq!(mae(&p.view(), &t.view()).unwrap(), 1.0);
        assert_eq!(mse(&t.view(), &t.view()).unwrap(), 0.0);
        let short = ndarray::arr1(&[1.0]);
        assert!(mse(&p.view(), &short.view()).is_err());
    }

    #[test]
    fn moments_hand_values() {
        let m = moments(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.skewness.unwrap(), 0.0);

        let m = moments(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(m.variance, 0.0);
        assert!(m.skewness.is_none() && m.kurtosis.is_none());

        // central moments of [0,0,0,4]: m2=3, m3=6, m4=21
        let m = moments(&[0.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.variance, 3.0);
        assert!((m.skewness.unwrap() - 6.0 / 3.0_f64.powf(1.5)).abs() < 1e-12);
        assert!((m.kurtosis.unwrap() - 21.0 / 9.0).abs() < 1e-12);

        assert!(moments(&[1.0]).is_err());
    }
}
