//! The reversible normalization family.
//!
//! All three normalizers implement the same template: statistics are
//! extracted from the lookback window, the forward map feeds the forecaster,
//! and the inverse map denormalizes predictions with the *same* lookback
//! statistics.
//!
//! - Identity: no-op forward/inverse.
//! - Per-window z-score with an optional learnable post-affine, using
//!   per-window mean and population standard deviation.
//! - Johnson S_U: `z = eps + delta * asinh((x - loc)/scale)` with robust
//!   per-window location (median) and scale (raw MAD). The map is strictly
//!   increasing in `x`, has the closed-form inverse
//!   `x = loc + scale * sinh((z - eps)/delta)`, and is differentiable in both
//!   data and shape, which is what the joint-training experiment exercises.
//!
//! Scale statistics below `1e-8` are replaced by `1.0` and flagged degenerate
//! so constant windows pass through shaped like the identity instead of
//! dividing by zero.

use ndarray::{Array2, Array3, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::exec::map_indices;
use crate::{Error, Result};

/// Scale estimates below this floor are replaced by 1.0 and flagged.
pub const SCALE_FLOOR: f64 = 1e-8;

/// Box bounds for the shape pair, shared by the warm-start clamp and the
/// outer search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeBox {
    pub delta_lo: f64,
    pub delta_hi: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
}

impl ShapeBox {
    pub fn new(delta_lo: f64, delta_hi: f64, eps_lo: f64, eps_hi: f64) -> Result<Self> {
        if !(delta_lo < delta_hi) || !(eps_lo < eps_hi) {
            return Err(Error::Config(format!(
                "box bounds must satisfy lo < hi, got delta [{delta_lo}, {delta_hi}], eps [{eps_lo}, {eps_hi}]"
            )));
        }
        if !(delta_lo > 0.0) {
            return Err(Error::Config(format!(
                "delta lower bound must be positive, got {delta_lo}"
            )));
        }
        Ok(Self {
            delta_lo,
            delta_hi,
            eps_lo,
            eps_hi,
        })
    }

    pub fn clamp_delta(&self, d: f64) -> f64 {
        d.clamp(self.delta_lo, self.delta_hi)
    }

    pub fn clamp_eps(&self, e: f64) -> f64 {
        e.clamp(self.eps_lo, self.eps_hi)
    }

    pub fn contains(&self, delta: f64, eps: f64) -> bool {
        (self.delta_lo..=self.delta_hi).contains(&delta) && (self.eps_lo..=self.eps_hi).contains(&eps)
    }
}

impl Default for ShapeBox {
    fn default() -> Self {
        Self {
            delta_lo: 0.8,
            delta_hi: 5.0,
            eps_lo: -1.0,
            eps_hi: 1.0,
        }
    }
}

/// The S_U shape pair, per channel, with a shared-mode flag.
///
/// In shared mode every channel carries the same `(delta, epsilon)`; the
/// arrays still have one entry per channel so consumers never branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    delta: Vec<f64>,
    epsilon: Vec<f64>,
    shared: bool,
}

impl ShapeParams {
    /// One `(delta, epsilon)` pair broadcast across `channels`.
    pub fn shared(delta: f64, epsilon: f64, channels: usize) -> Result<Self> {
        Self::validate_entry(delta, epsilon)?;
        if channels == 0 {
            return Err(Error::Config("shape needs at least one channel".into()));
        }
        Ok(Self {
            delta: vec![delta; channels],
            epsilon: vec![epsilon; channels],
            shared: true,
        })
    }

    /// Independent per-channel values.
    pub fn per_channel(delta: Vec<f64>, epsilon: Vec<f64>) -> Result<Self> {
        if delta.is_empty() || delta.len() != epsilon.len() {
            return Err(Error::Config(format!(
                "per-channel shape needs equal non-empty arrays, got {} and {}",
                delta.len(),
                epsilon.len()
            )));
        }
        for (d, e) in delta.iter().zip(&epsilon) {
            Self::validate_entry(*d, *e)?;
        }
        Ok(Self {
            delta,
            epsilon,
            shared: false,
        })
    }

    fn validate_entry(delta: f64, epsilon: f64) -> Result<()> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("delta must be positive and finite, got {delta}")));
        }
        if !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be finite, got {epsilon}")));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.delta.len()
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.epsilon
    }

    /// Overwrites the values in place, keeping invariants (used by the joint
    /// shape-training loop). Shared mode requires equal entries.
    pub fn set(&mut self, delta: Vec<f64>, epsilon: Vec<f64>) -> Result<()> {
        if delta.len() != self.delta.len() || epsilon.len() != self.epsilon.len() {
            return Err(Error::Config("shape update changes channel count".into()));
        }
        for (d, e) in delta.iter().zip(&epsilon) {
            Self::validate_entry(*d, *e)?;
        }
        if self.shared {
            let (d0, e0) = (delta[0], epsilon[0]);
            if delta.iter().any(|d| *d != d0) || epsilon.iter().any(|e| *e != e0) {
                return Err(Error::Config("shared shape update must keep entries equal".into()));
            }
        }
        self.delta = delta;
        self.epsilon = epsilon;
        Ok(())
    }
}

/// The on-disk interchange form of [`ShapeParams`] plus channel names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDoc {
    pub shared: bool,
    pub delta: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_contacts: Option<BoundaryContacts>,
}

/// Marks best-point axes that landed on a box bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryContacts {
    pub delta: Vec<bool>,
    pub epsilon: Vec<bool>,
}

impl BoundaryContacts {
    pub fn any(&self) -> bool {
        self.delta.iter().chain(&self.epsilon).any(|b| *b)
    }
}

impl ShapeDoc {
    pub fn from_params(params: &ShapeParams, channel_names: &[String]) -> Self {
        Self {
            shared: params.shared,
            delta: params.delta.clone(),
            epsilon: params.epsilon.clone(),
            channels: channel_names.to_vec(),
            boundary_contacts: None,
        }
    }

    pub fn to_params(&self) -> Result<ShapeParams> {
        if self.shared {
            let d = *self.delta.first().ok_or_else(|| Error::Config("empty shape document".into()))?;
            let e = *self.epsilon.first().ok_or_else(|| Error::Config("empty shape document".into()))?;
            ShapeParams::shared(d, e, self.delta.len())
        } else {
            ShapeParams::per_channel(self.delta.clone(), self.epsilon.clone())
        }
    }
}

/// How per-window statistics were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StatKind {
    RobustMedianMad,
    MeanStd,
}

/// Per-window, per-channel location/scale, computed from the lookback only
/// and reused at denormalization time.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub loc: Array2<f64>,
    pub scale: Array2<f64>,
    pub kind: StatKind,
    /// Window/channel pairs whose scale fell below [`SCALE_FLOOR`] and was
    /// replaced by 1.0.
    pub degenerate: Vec<(usize, usize)>,
}

impl InstanceStats {
    pub fn num_windows(&self) -> usize {
        self.loc.nrows()
    }

    pub fn channels(&self) -> usize {
        self.loc.ncols()
    }

    pub fn is_degenerate(&self, window: usize, channel: usize) -> bool {
        self.degenerate.contains(&(window, channel))
    }
}

/// Median with the even-length midpoint convention. Sorts in place.
fn median_mut(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn floor_scale(raw: f64, window: usize, channel: usize, degenerate: &mut Vec<(usize, usize)>) -> f64 {
    if raw < SCALE_FLOOR {
        degenerate.push((window, channel));
        1.0
    } else {
        raw
    }
}

/// Per-window median and raw MAD (no consistency constant) per channel.
pub fn robust_loc_scale(lookbacks: &ArrayView3<f64>) -> InstanceStats {
    let (n, t, channels) = lookbacks.dim();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)> = map_indices(n, |i| {
        let window = lookbacks.index_axis(Axis(0), i);
        let mut loc = Vec::with_capacity(channels);
        let mut scale = Vec::with_capacity(channels);
        let mut degen = Vec::new();
        let mut buf = vec![0.0; t];
        for c in 0..channels {
            for (k, v) in window.column(c).iter().enumerate() {
                buf[k] = *v;
            }
            let med = median_mut(&mut buf);
            for v in buf.iter_mut() {
                *v = (*v - med).abs();
            }
            let mad = median_mut(&mut buf);
            loc.push(med);
            let mut local_degen = Vec::new();
            scale.push(floor_scale(mad, i, c, &mut local_degen));
            if !local_degen.is_empty() {
                degen.push(c);
            }
        }
        (loc, scale, degen)
    });
    assemble_stats(rows, n, channels, StatKind::RobustMedianMad)
}

/// Per-window mean and population standard deviation per channel.
pub fn mean_std_stats(lookbacks: &ArrayView3<f64>) -> InstanceStats {
    let (n, t, channels) = lookbacks.dim();
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)> = map_indices(n, |i| {
        let window = lookbacks.index_axis(Axis(0), i);
        let mut loc = Vec::with_capacity(channels);
        let mut scale = Vec::with_capacity(channels);
        let mut degen = Vec::new();
        for c in 0..channels {
            let col = window.column(c);
            let mean = col.sum() / t as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
            let sd = var.sqrt();
            loc.push(mean);
            let mut local_degen = Vec::new();
            scale.push(floor_scale(sd, i, c, &mut local_degen));
            if !local_degen.is_empty() {
                degen.push(c);
            }
        }
        (loc, scale, degen)
    });
    assemble_stats(rows, n, channels, StatKind::MeanStd)
}

fn assemble_stats(
    rows: Vec<(Vec<f64>, Vec<f64>, Vec<usize>)>,
    n: usize,
    channels: usize,
    kind: StatKind,
) -> InstanceStats {
    let mut loc = Array2::zeros((n, channels));
    let mut scale = Array2::zeros((n, channels));
    let mut degenerate = Vec::new();
    for (i, (l, s, d)) in rows.into_iter().enumerate() {
        for c in 0..channels {
            loc[[i, c]] = l[c];
            scale[[i, c]] = s[c];
        }
        degenerate.extend(d.into_iter().map(|c| (i, c)));
    }
    InstanceStats {
        loc,
        scale,
        kind,
        degenerate,
    }
}

fn check_dims(x: &ArrayView3<f64>, stats: &InstanceStats, channels: usize) -> Result<()> {
    let (n, _, c) = x.dim();
    if stats.loc.dim() != (n, c) {
        return Err(Error::ShapeMismatch(format!(
            "stats {:?} vs data ({n}, _, {c})",
            stats.loc.dim()
        )));
    }
    if channels != c {
        return Err(Error::ShapeMismatch(format!(
            "shape has {channels} channels, data has {c}"
        )));
    }
    Ok(())
}

fn check_positive(stats: &InstanceStats, shape: &ShapeParams) -> Result<()> {
    if let Some(d) = shape.delta().iter().find(|d| !(**d > 0.0)) {
        return Err(Error::Config(format!("non-positive delta {d}")));
    }
    if let Some(s) = stats.scale.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Config(format!("non-positive scale {s}")));
    }
    Ok(())
}

/// `z = eps_c + delta_c * asinh((x - loc)/scale)`, elementwise over `(N, *, C)`.
pub fn jsu_forward(
    x: &ArrayView3<f64>,
    stats: &InstanceStats,
    shape: &ShapeParams,
) -> Result<Array3<f64>> {
    check_dims(x, stats, shape.channels())?;
    check_positive(stats, shape)?;
    let (n, t, channels) = x.dim();
    let mut out = Array3::zeros((n, t, channels));
    for i in 0..n {
        for c in 0..channels {
            let (loc, scale) = (stats.loc[[i, c]], stats.scale[[i, c]]);
            let (delta, eps) = (shape.delta()[c], shape.epsilon()[c]);
            for k in 0..t {
                let u = (x[[i, k, c]] - loc) / scale;
                out[[i, k, c]] = eps + delta * u.asinh();
            }
        }
    }
    Ok(out)
}

/// `x = loc + scale * sinh((z - eps_c)/delta_c)`, the exact inverse of
/// [`jsu_forward`].
pub fn jsu_inverse(
    z: &ArrayView3<f64>,
    stats: &InstanceStats,
    shape: &ShapeParams,
) -> Result<Array3<f64>> {
    check_dims(z, stats, shape.channels())?;
    check_positive(stats, shape)?;
    let (n, t, channels) = z.dim();
    let mut out = Array3::zeros((n, t, channels));
    for i in 0..n {
        for c in 0..channels {
            let (loc, scale) = (stats.loc[[i, c]], stats.scale[[i, c]]);
            let (delta, eps) = (shape.delta()[c], shape.epsilon()[c]);
            for k in 0..t {
                let w = (z[[i, k, c]] - eps) / delta;
                out[[i, k, c]] = loc + scale * w.sinh();
            }
        }
    }
    Ok(out)
}

/// Learnable per-channel post-affine for the z-score normalizer. Disabled
/// means exactly `gamma = 1, beta = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinePost {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub enabled: bool,
}

impl AffinePost {
    pub fn disabled(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            enabled: false,
        }
    }

    pub fn identity_enabled(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            enabled: true,
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.gamma.len() != channels || self.beta.len() != channels {
            return Err(Error::ShapeMismatch(format!(
                "affine post has {} channels, data has {channels}",
                self.gamma.len()
            )));
        }
        if self.enabled {
            if let Some(g) = self.gamma.iter().find(|g| **g == 0.0 || !g.is_finite()) {
                return Err(Error::Config(format!("gamma must be nonzero and finite, got {g}")));
            }
        }
        Ok(())
    }

    fn gamma_at(&self, c: usize) -> f64 {
        if self.enabled {
            self.gamma[c]
        } else {
            1.0
        }
    }

    fn beta_at(&self, c: usize) -> f64 {
        if self.enabled {
            self.beta[c]
        } else {
            0.0
        }
    }
}

/// `z = gamma_c * (x - mean)/std + beta_c`.
pub fn revin_forward(
    x: &ArrayView3<f64>,
    stats: &InstanceStats,
    post: &AffinePost,
) -> Result<Array3<f64>> {
    let (n, t, channels) = x.dim();
    check_dims(x, stats, channels)?;
    post.check(channels)?;
    let mut out = Array3::zeros((n, t, channels));
    for i in 0..n {
        for c in 0..channels {
            let (loc, scale) = (stats.loc[[i, c]], stats.scale[[i, c]]);
            let (g, b) = (post.gamma_at(c), post.beta_at(c));
            for k in 0..t {
                out[[i, k, c]] = g * (x[[i, k, c]] - loc) / scale + b;
            }
        }
    }
    Ok(out)
}

/// Exactly undoes [`revin_forward`].
pub fn revin_inverse(
    z: &ArrayView3<f64>,
    stats: &InstanceStats,
    post: &AffinePost,
) -> Result<Array3<f64>> {
    let (n, t, channels) = z.dim();
    check_dims(z, stats, channels)?;
    post.check(channels)?;
    let mut out = Array3::zeros((n, t, channels));
    for i in 0..n {
        for c in 0..channels {
            let (loc, scale) = (stats.loc[[i, c]], stats.scale[[i, c]]);
            let (g, b) = (post.gamma_at(c), post.beta_at(c));
            for k in 0..t {
                out[[i, k, c]] = loc + scale * (z[[i, k, c]] - b) / g;
            }
        }
    }
    Ok(out)
}

/// Analytic partials of the forward map at each element.
#[derive(Debug, Clone)]
pub struct JsuForwardGrads {
    /// `asinh(u)` with `u = (x - loc)/scale`.
    pub wrt_delta: Array3<f64>,
    /// Identically 1.
    pub wrt_epsilon: Array3<f64>,
    /// `delta / (scale * sqrt(u^2 + 1))`.
    pub wrt_x: Array3<f64>,
}

/// Analytic partials of the inverse map at each element.
#[derive(Debug, Clone)]
pub struct JsuInverseGrads {
    /// `-scale * cosh(w) * (z - eps)/delta^2` with `w = (z - eps)/delta`.
    pub wrt_delta: Array3<f64>,
    /// `-scale * cosh(w)/delta`.
    pub wrt_epsilon: Array3<f64>,
    /// `scale * cosh(w)/delta`.
    pub wrt_z: Array3<f64>,
}

pub fn jsu_forward_grads(
    x: &ArrayView3<f64>,
    stats: &InstanceStats,
    shape: &ShapeParams,
) -> Result<JsuForwardGrads> {
    check_dims(x, stats, shape.channels())?;
    check_positive(stats, shape)?;
    let dim = x.dim();
    let mut wrt_delta = Array3::zeros(dim);
    let mut wrt_epsilon = Array3::zeros(dim);
    let mut wrt_x = Array3::zeros(dim);
    let (n, t, channels) = dim;
    for i in 0..n {
        for c in 0..channels {
            let (loc, scale) = (stats.loc[[i, c]], stats.scale[[i, c]]);
            let delta = shape.delta()[c];
            for k in 0..t {
                let u = (x[[i, k, c]] - loc) / scale;
                wrt_delta[[i, k, c]] = u.asinh();
                wrt_epsilon[[i, k, c]] = 1.0;
                wrt_x[[i, k, c]] = delta / (scale * (u * u + 1.0).sqrt());
            }
        }
    }
    Ok(JsuForwardGrads {
        wrt_delta,
        wrt_epsilon,
        wrt_x,
    })
}

pub fn jsu_inverse_grads(
    z: &ArrayView3<f64>,
    stats: &InstanceStats,
    shape: &ShapeParams,
) -> Result<JsuInverseGrads> {
    check_dims(z, stats, shape.channels())?;
    check_positive(stats, shape)?;
    let dim = z.dim();
    let mut wrt_delta = Array3::zeros(dim);
    let mut wrt_epsilon = Array3::zeros(dim);
    let mut wrt_z = Array3::zeros(dim);
    let (n, t, channels) = dim;
    for i in 0..n {
        for c in 0..channels {
            let scale = stats.scale[[i, c]];
            let (delta, eps) = (shape.delta()[c], shape.epsilon()[c]);
            for k in 0..t {
                let centered = z[[i, k, c]] - eps;
                let w = centered / delta;
                let cw = w.cosh();
                wrt_delta[[i, k, c]] = -scale * cw * centered / (delta * delta);
                wrt_epsilon[[i, k, c]] = -scale * cw / delta;
                wrt_z[[i, k, c]] = scale * cw / delta;
            }
        }
    }
    Ok(JsuInverseGrads {
        wrt_delta,
        wrt_epsilon,
        wrt_z,
    })
}

/// Normalizer kind, as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizerKind {
    None,
    RevIn,
    NoRin,
}

impl NormalizerKind {
    pub fn name(self) -> &'static str {
        match self {
            NormalizerKind::None => "none",
            NormalizerKind::RevIn => "revin",
            NormalizerKind::NoRin => "norin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(NormalizerKind::None),
            "revin" => Ok(NormalizerKind::RevIn),
            "norin" => Ok(NormalizerKind::NoRin),
            other => Err(Error::Config(format!(
                "unknown normalizer {other:?}, expected none|revin|norin"
            ))),
        }
    }
}

/// A configured normalizer instance.
#[derive(Debug, Clone, PartialEq)]
pub enum Normalizer {
    Identity,
    RevIn { post: AffinePost },
    NoRin { shape: ShapeParams },
}

impl Normalizer {
    pub fn kind(&self) -> NormalizerKind {
        match self {
            Normalizer::Identity => NormalizerKind::None,
            Normalizer::RevIn { .. } => NormalizerKind::RevIn,
            Normalizer::NoRin { .. } => NormalizerKind::NoRin,
        }
    }

    /// Instance statistics for a batch of lookbacks; `None` for the identity.
    pub fn stats(&self, lookbacks: &ArrayView3<f64>) -> Option<InstanceStats> {
        match self {
            Normalizer::Identity => None,
            Normalizer::RevIn { .. } => Some(mean_std_stats(lookbacks)),
            Normalizer::NoRin { .. } => Some(robust_loc_scale(lookbacks)),
        }
    }

    pub fn forward(
        &self,
        x: &ArrayView3<f64>,
        stats: Option<&InstanceStats>,
    ) -> Result<Array3<f64>> {
        match (self, stats) {
            (Normalizer::Identity, _) => Ok(x.to_owned()),
            (Normalizer::RevIn { post }, Some(s)) => revin_forward(x, s, post),
            (Normalizer::NoRin { shape }, Some(s)) => jsu_forward(x, s, shape),
            _ => Err(Error::Config("normalizer requires instance stats".into())),
        }
    }

    pub fn inverse(
        &self,
        z: &ArrayView3<f64>,
        stats: Option<&InstanceStats>,
    ) -> Result<Array3<f64>> {
        match (self, stats) {
            (Normalizer::Identity, _) => Ok(z.to_owned()),
            (Normalizer::RevIn { post }, Some(s)) => revin_inverse(z, s, post),
            (Normalizer::NoRin { shape }, Some(s)) => jsu_inverse(z, s, shape),
            _ => Err(Error::Config("normalizer requires instance stats".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;
    use proptest::prelude::*;

    fn stats_for(loc: f64, scale: f64, n: usize, c: usize) -> InstanceStats {
        InstanceStats {
            loc: Array2::from_elem((n, c), loc),
            scale: Array2::from_elem((n, c), scale),
            kind: StatKind::RobustMedianMad,
            degenerate: vec![],
        }
    }

    #[test]
    fn robust_stats_hand_values() {
        // window [1,2,3,4,100]: median 3, MAD = median([2,1,0,1,97]) = 1
        let lb = Array3::from_shape_vec((1, 5, 1), vec![1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        let s = robust_loc_scale(&lb.view());
        assert_eq!(s.loc[[0, 0]], 3.0);
        assert_eq!(s.scale[[0, 0]], 1.0);
        assert!(!s.is_degenerate(0, 0));

        // constant window: floored scale, degenerate flag
        let lb = Array3::from_elem((1, 4, 1), 5.0);
        let s = robust_loc_scale(&lb.view());
        assert_eq!(s.loc[[0, 0]], 5.0);
        assert_eq!(s.scale[[0, 0]], 1.0);
        assert!(s.is_degenerate(0, 0));

        // even-length midpoint convention
        let lb = Array3::from_shape_vec((1, 2, 1), vec![0.0, 10.0]).unwrap();
        let s = robust_loc_scale(&lb.view());
        assert_eq!(s.loc[[0, 0]], 5.0);
        assert_eq!(s.scale[[0, 0]], 5.0);
    }

    #[test]
    fn mean_std_hand_values() {
        let lb = Array3::from_shape_vec((1, 3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let s = mean_std_stats(&lb.view());
        assert_eq!(s.loc[[0, 0]], 2.0);
        assert!((s.scale[[0, 0]] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);

        let lb = Array3::from_elem((1, 2, 1), 7.0);
        let s = mean_std_stats(&lb.view());
        assert_eq!(s.scale[[0, 0]], 1.0);
        assert!(s.is_degenerate(0, 0));

        let lb = Array3::from_shape_vec((1, 2, 1), vec![-1.0, 1.0]).unwrap();
        let s = mean_std_stats(&lb.view());
        assert_eq!(s.loc[[0, 0]], 0.0);
        assert_eq!(s.scale[[0, 0]], 1.0);
        assert!(!s.is_degenerate(0, 0));
    }

    #[test]
    fn jsu_forward_hand_values() {
        let stats = stats_for(0.0, 1.0, 1, 1);
        let shape = ShapeParams::shared(1.0, 0.0, 1).unwrap();
        let x = arr3(&[[[0.0]]]);
        let z = jsu_forward(&x.view(), &stats, &shape).unwrap();
        assert_eq!(z[[0, 0, 0]], 0.0);

        let x = arr3(&[[[1.0f64.sinh()]]]);
        let z = jsu_forward(&x.view(), &stats, &shape).unwrap();
        assert!((z[[0, 0, 0]] - 1.0).abs() < 1e-15);

        // x=3, delta=2, eps=-0.5, loc=1, scale=2 -> -0.5 + 2*asinh(1)
        let stats = stats_for(1.0, 2.0, 1, 1);
        let shape = ShapeParams::shared(2.0, -0.5, 1).unwrap();
        let x = arr3(&[[[3.0]]]);
        let z = jsu_forward(&x.view(), &stats, &shape).unwrap();
        let expected = -0.5 + 2.0 * (1.0 + 2.0f64.sqrt()).ln();
        assert!((z[[0, 0, 0]] - expected).abs() < 1e-12);
        assert!((z[[0, 0, 0]] - 1.2627471).abs() < 1e-7);

        // round-trip of the same point
        let back = jsu_inverse(&z.view(), &stats, &shape).unwrap();
        assert!((back[[0, 0, 0]] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jsu_inverse_near_linear_for_huge_delta() {
        let stats = stats_for(2.0, 3.0, 1, 1);
        let shape = ShapeParams::shared(1e9, 0.25, 1).unwrap();
        let z = arr3(&[[[0.9]]]);
        let x = jsu_inverse(&z.view(), &stats, &shape).unwrap();
        let affine = 2.0 + 3.0 * (0.9 - 0.25) / 1e9;
        assert!(((x[[0, 0, 0]] - affine) / affine).abs() < 1e-12);
    }

    #[test]
    fn revin_hand_values() {
        let stats = stats_for(0.0, 1.0, 1, 1);
        let post = AffinePost::disabled(1);
        let x = arr3(&[[[0.3], [-0.7]]]);
        let z = revin_forward(&x.view(), &stats, &post).unwrap();
        assert_eq!(z, x);

        let lb = Array3::from_shape_vec((1, 3, 1), vec![1.0, 2.0, 3.0]).unwrap();
        let s = mean_std_stats(&lb.view());
        let z = revin_forward(&lb.view(), &s, &post).unwrap();
        let e = 1.224744871391589;
        assert!((z[[0, 0, 0]] + e).abs() < 1e-12);
        assert!(z[[0, 1, 0]].abs() < 1e-12);
        assert!((z[[0, 2, 0]] - e).abs() < 1e-12);
    }

    #[test]
    fn revin_rejects_zero_gamma() {
        let stats = stats_for(0.0, 1.0, 1, 1);
        let post = AffinePost {
            gamma: vec![0.0],
            beta: vec![0.0],
            enabled: true,
        };
        let x = arr3(&[[[1.0]]]);
        assert!(revin_forward(&x.view(), &stats, &post).is_err());
    }

    #[test]
    fn grad_special_points() {
        // forward at u=0
        let stats = stats_for(4.0, 2.5, 1, 1);
        let shape = ShapeParams::shared(3.0, 0.1, 1).unwrap();
        let x = arr3(&[[[4.0]]]);
        let g = jsu_forward_grads(&x.view(), &stats, &shape).unwrap();
        assert_eq!(g.wrt_delta[[0, 0, 0]], 0.0);
        assert_eq!(g.wrt_epsilon[[0, 0, 0]], 1.0);
        assert!((g.wrt_x[[0, 0, 0]] - 3.0 / 2.5).abs() < 1e-15);

        // inverse at z = eps
        let z = arr3(&[[[0.1]]]);
        let g = jsu_inverse_grads(&z.view(), &stats, &shape).unwrap();
        assert_eq!(g.wrt_delta[[0, 0, 0]], 0.0);
        assert!((g.wrt_epsilon[[0, 0, 0]] + 2.5 / 3.0).abs() < 1e-15);
        assert!((g.wrt_z[[0, 0, 0]] - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn grads_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let h = 1e-5;
        for _ in 0..1000 {
            let delta: f64 = rng.random_range(0.8..5.0);
            let eps: f64 = rng.random_range(-1.0..1.0);
            let loc: f64 = rng.random_range(-3.0..3.0);
            let scale: f64 = rng.random_range(0.3..4.0);
            let x0: f64 = rng.random_range(-5.0..5.0);
            let z0: f64 = rng.random_range(-3.0..3.0);

            let fwd = |x: f64, d: f64, e: f64| e + d * ((x - loc) / scale).asinh();
            let inv = |z: f64, d: f64, e: f64| loc + scale * ((z - e) / d).sinh();

            let stats = stats_for(loc, scale, 1, 1);
            let shape = ShapeParams::shared(delta, eps, 1).unwrap();
            let xa = arr3(&[[[x0]]]);
            let za = arr3(&[[[z0]]]);
            let gf = jsu_forward_grads(&xa.view(), &stats, &shape).unwrap();
            let gi = jsu_inverse_grads(&za.view(), &stats, &shape).unwrap();

            let checks = [
                (gf.wrt_delta[[0, 0, 0]], (fwd(x0, delta + h, eps) - fwd(x0, delta - h, eps)) / (2.0 * h)),
                (gf.wrt_epsilon[[0, 0, 0]], (fwd(x0, delta, eps + h) - fwd(x0, delta, eps - h)) / (2.0 * h)),
                (gf.wrt_x[[0, 0, 0]], (fwd(x0 + h, delta, eps) - fwd(x0 - h, delta, eps)) / (2.0 * h)),
                (gi.wrt_delta[[0, 0, 0]], (inv(z0, delta + h, eps) - inv(z0, delta - h, eps)) / (2.0 * h)),
                (gi.wrt_epsilon[[0, 0, 0]], (inv(z0, delta, eps + h) - inv(z0, delta, eps - h)) / (2.0 * h)),
                (gi.wrt_z[[0, 0, 0]], (inv(z0 + h, delta, eps) - inv(z0 - h, delta, eps)) / (2.0 * h)),
            ];
            for (analytic, fd) in checks {
                let denom = fd.abs().max(1e-6);
                assert!(
                    ((analytic - fd) / denom).abs() < 1e-5,
                    "analytic {analytic} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn reshaping_pulls_sample_toward_normal() {
        // sample from the S_U law, forward with the matching parameters
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (delta, eps, loc, scale) = (1.3, -0.4, 2.0, 0.7);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                loc + scale * ((z - eps) / delta).sinh()
            })
            .collect();
        let x = Array3::from_shape_vec((1, n, 1), draws).unwrap();
        let stats = stats_for(loc, scale, 1, 1);
        let shape = ShapeParams::shared(delta, eps, 1).unwrap();
        let z = jsu_forward(&x.view(), &stats, &shape).unwrap();
        let zs: Vec<f64> = z.iter().copied().collect();
        let m = crate::series::moments(&zs).unwrap();
        assert!(m.skewness.unwrap().abs() < 0.05, "skew {:?}", m.skewness);
        assert!((m.kurtosis.unwrap() - 3.0).abs() < 0.1, "kurt {:?}", m.kurtosis);
    }

    #[test]
    fn shape_doc_round_trip() {
        let p = ShapeParams::per_channel(vec![1.5, 2.5], vec![-0.2, 0.4]).unwrap();
        let doc = ShapeDoc::from_params(&p, &["a".into(), "b".into()]);
        let json = serde_json::to_string(&doc).unwrap();
        let back: ShapeDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(back.to_params().unwrap(), p);
    }

    proptest! {
        #[test]
        fn jsu_round_trip(
            x in proptest::collection::vec(-1e3f64..1e3, 4..32),
            delta in 0.8f64..5.0,
            eps in -1.0f64..1.0,
            loc in -10.0f64..10.0,
            scale in 1e-3f64..1e3,
        ) {
            let n = x.len();
            let arr = Array3::from_shape_vec((1, n, 1), x).unwrap();
            let stats = stats_for(loc, scale, 1, 1);
            let shape = ShapeParams::shared(delta, eps, 1).unwrap();
            let z = jsu_forward(&arr.view(), &stats, &shape).unwrap();
            let back = jsu_inverse(&z.view(), &stats, &shape).unwrap();
            for (a, b) in arr.iter().zip(back.iter()) {
                let denom = a.abs().max(1.0);
                prop_assert!(((a - b) / denom).abs() < 1e-9);
            }
        }

        #[test]
        fn jsu_forward_is_strictly_increasing(
            x1 in -1e3f64..1e3,
            gap in 1e-6f64..10.0,
            delta in 0.8f64..5.0,
            eps in -1.0f64..1.0,
            scale in 1e-2f64..1e2,
        ) {
            let stats = stats_for(0.0, scale, 1, 1);
            let shape = ShapeParams::shared(delta, eps, 1).unwrap();
            let a = arr3(&[[[x1]]]);
            let b = arr3(&[[[x1 + gap]]]);
            let za = jsu_forward(&a.view(), &stats, &shape).unwrap();
            let zb = jsu_forward(&b.view(), &stats, &shape).unwrap();
            prop_assert!(za[[0,0,0]] < zb[[0,0,0]]);
        }

        #[test]
        fn revin_round_trip(
            x in proptest::collection::vec(-1e3f64..1e3, 4..32),
            gamma in proptest::sample::select(vec![0.5f64, 1.0, 2.0, -1.5]),
            beta in -2.0f64..2.0,
            enabled in proptest::bool::ANY,
        ) {
            let n = x.len();
            let arr = Array3::from_shape_vec((1, n, 1), x).unwrap();
            let stats = mean_std_stats(&arr.view());
            let post = AffinePost { gamma: vec![gamma], beta: vec![beta], enabled };
            let z = revin_forward(&arr.view(), &stats, &post).unwrap();
            let back = revin_inverse(&z.view(), &stats, &post).unwrap();
            for (a, b) in arr.iter().zip(back.iter()) {
                let denom = a.abs().max(1.0);
                prop_assert!(((a - b) / denom).abs() < 1e-9);
            }
        }

        #[test]
        fn revin_preserves_sample_shape(
            x in proptest::collection::vec(-1e2f64..1e2, 8..64),
        ) {
            let n = x.len();
            let arr = Array3::from_shape_vec((1, n, 1), x.clone()).unwrap();
            let m_before = crate::series::moments(&x).unwrap();
            prop_assume!(m_before.variance > 1e-9);
            let stats = mean_std_stats(&arr.view());
            let z = revin_forward(&arr.view(), &stats, &AffinePost::disabled(1)).unwrap();
            let zs: Vec<f64> = z.iter().copied().collect();
            let m_after = crate::series::moments(&zs).unwrap();
            let (sb, sa) = (m_before.skewness.unwrap(), m_after.skewness.unwrap());
            let denom = sb.abs().max(1.0);
            prop_assert!(((sb - sa) / denom).abs() < 1e-8, "skew {sb} vs {sa}");
        }
    }

    #[test]
    fn near_linear_limit_bound() {
        // inside the max|x-loc|/scale <= 1e-3 regime the forward map stays
        // within 1e-8 of its affine linearization relative to the affine
        // term; the deviation ratio is u^2/6, so u = 1e-4 here
        let xs: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        let n = xs.len();
        let arr = Array3::from_shape_vec((1, n, 1), xs.clone()).unwrap();
        let scale = 1.0e4; // max|x|/scale = 1e-4
        let (delta, eps) = (2.0, -0.5);
        let stats = stats_for(0.0, scale, 1, 1);
        let shape = ShapeParams::shared(delta, eps, 1).unwrap();
        let z = jsu_forward(&arr.view(), &stats, &shape).unwrap();
        let mut max_dev = 0.0f64;
        let mut max_affine = 0.0f64;
        for (x, zv) in xs.iter().zip(z.iter()) {
            let affine_term = delta * x / scale;
            max_affine = max_affine.max(affine_term.abs());
            max_dev = max_dev.max((zv - (eps + affine_term)).abs());
        }
        assert!(max_dev <= 1e-8 * max_affine, "dev {max_dev} vs {max_affine}");
    }
}
